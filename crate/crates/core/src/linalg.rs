//! Small dense linear-algebra helpers on Hermitian matrices.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::CMatrix;

/// Largest condition number accepted by [`hermitian_inverse`].
pub(crate) const MAX_CONDITION: f64 = 1e12;

/// Inverse of a Hermitian positive definite matrix via its eigendecomposition,
/// rejecting condition numbers above [`MAX_CONDITION`].
pub(crate) fn hermitian_inverse(m: &CMatrix, context: &str) -> Result<CMatrix> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension(format!("{context}: {}x{} not square", n, m.ncols())));
    }
    if n == 0 {
        return Ok(CMatrix::zeros(0, 0));
    }
    let sym = (m + m.adjoint()) * Complex64::from(0.5);
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min <= 0.0 { f64::INFINITY } else { max / min };
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned {
            context: context.to_string(),
            condition,
        });
    }
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col /= Complex64::from(eig.eigenvalues[j]);
    }
    let inv = scaled * v.adjoint();
    Ok((&inv + inv.adjoint()) * Complex64::from(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_hermitian() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.5, 0.5),
                Complex64::new(0.5, -0.5),
                Complex64::new(1.0, 0.0),
            ],
        );
        let inv = hermitian_inverse(&m, "test").unwrap();
        let id = &m * inv;
        assert!((id - CMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn singular_is_rejected() {
        let m = CMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        assert!(matches!(
            hermitian_inverse(&m, "rank one"),
            Err(Error::IllConditioned { .. })
        ));
    }
}
