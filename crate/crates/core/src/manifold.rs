//! Steering vectors, expected steering under von Mises uncertainty,
//! dictionaries, expected Gram matrices and channel reconstruction.
//!
//! Channel matrices are `N x M` (subcarriers by antennas). Whenever a matrix
//! is flattened the antenna index runs fastest, so entry `(n, m)` lands at
//! `n * M + m` and a delay shift acts as `diag(e^{-j n eps}) (x) I_M`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beliefs::{trig_moments, PathBelief, VonMises};
use crate::error::{Error, Result};
use crate::{CMatrix, CVector};

/// NMSE reported for an exact match.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Reduces an angle to `[0, 2pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Reduces an angle to `[-pi, pi)`.
pub fn wrap_signed(x: f64) -> f64 {
    let r = wrap_angle(x + std::f64::consts::PI);
    r - std::f64::consts::PI
}

/// Subcarrier count and the two antenna axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayDims {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
}

impl ArrayDims {
    pub fn new(n: usize, m1: usize, m2: usize) -> Self {
        ArrayDims { n, m1, m2 }
    }

    pub fn m(&self) -> usize {
        self.m1 * self.m2
    }
}

/// Normalized delay, azimuth and zenith of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub tau: f64,
    pub theta: f64,
    pub phi: f64,
}

impl PathParams {
    pub fn new(tau: f64, theta: f64, phi: f64) -> Self {
        PathParams {
            tau: wrap_angle(tau),
            theta: wrap_angle(theta),
            phi: wrap_angle(phi),
        }
    }
}

/// `e^{-j k omega}` for `k` in `indices`, without normalization.
pub fn phase_ramp(indices: impl Iterator<Item = usize>, omega: f64) -> Vec<Complex64> {
    let omega = wrap_angle(omega);
    indices
        .map(|k| Complex64::from_polar(1.0, -(k as f64) * omega))
        .collect()
}

/// `a_x(omega) = [1, e^{-j omega}, ..., e^{-j (x-1) omega}] / sqrt(x)`.
pub fn steering(x: usize, omega: f64) -> CVector {
    let s = 1.0 / (x as f64).sqrt();
    CVector::from_iterator(x, phase_ramp(0..x, omega).into_iter().map(|v| v * s))
}

/// `b(theta, phi) = a_{M1}(theta) (x) a_{M2}(phi)`.
pub fn spatial_steering(theta: f64, phi: f64, m1: usize, m2: usize) -> CVector {
    kron(&steering(m1, theta), &steering(m2, phi))
}

/// `E[a_x(omega)]` for `omega ~ VM(mu, kappa)`.
pub fn expected_steering(x: usize, belief: &VonMises) -> CVector {
    let moments = trig_moments(belief.kappa, x);
    let s = 1.0 / (x as f64).sqrt();
    let ramp = phase_ramp(0..x, belief.mu);
    CVector::from_iterator(x, ramp.iter().zip(&moments).map(|(p, r)| p * (r * s)))
}

/// `E[a_x(omega_1 + omega_2)]` for independent von Mises summands.
pub fn expected_shifted_steering(x: usize, a: &VonMises, b: &VonMises) -> CVector {
    let ra = trig_moments(a.kappa, x);
    let rb = trig_moments(b.kappa, x);
    let s = 1.0 / (x as f64).sqrt();
    let ramp = phase_ramp(0..x, a.mu + b.mu);
    CVector::from_iterator(
        x,
        (0..x).map(|k| ramp[k] * (ra[k] * rb[k] * s)),
    )
}

/// `E[b(theta, phi)]` under a path belief.
pub fn expected_spatial(belief: &PathBelief, m1: usize, m2: usize) -> CVector {
    kron(
        &expected_steering(m1, &belief.theta),
        &expected_steering(m2, &belief.phi),
    )
}

/// Kronecker product of two column vectors.
pub fn kron(a: &CVector, b: &CVector) -> CVector {
    let nb = b.len();
    CVector::from_fn(a.len() * nb, |i, _| a[i / nb] * b[i % nb])
}

/// Dictionary over all subcarriers: column `l` is
/// `a_N(tau_l + eps) (x) b(theta_l, phi_l)`.
pub fn dictionary(paths: &[PathParams], eps: f64, dims: ArrayDims) -> CMatrix {
    let rows: Vec<usize> = (0..dims.n).collect();
    dictionary_rows(paths, eps, dims, &rows)
}

/// Dictionary restricted to the subcarriers in `rows`.
pub fn dictionary_rows(paths: &[PathParams], eps: f64, dims: ArrayDims, rows: &[usize]) -> CMatrix {
    let m = dims.m();
    let mut out = CMatrix::zeros(rows.len() * m, paths.len());
    let s = 1.0 / (dims.n as f64).sqrt();
    for (l, p) in paths.iter().enumerate() {
        let a = CVector::from_iterator(
            rows.len(),
            phase_ramp(rows.iter().copied(), p.tau + eps).into_iter().map(|v| v * s),
        );
        let b = spatial_steering(p.theta, p.phi, dims.m1, dims.m2);
        out.set_column(l, &kron(&a, &b));
    }
    out
}

/// Expected delay factor `E[a_N(tau + eps)]` restricted to `rows`.
pub fn expected_delay_rows(tau: &VonMises, eps: &VonMises, n: usize, rows: &[usize]) -> CVector {
    let top = rows.iter().copied().max().map_or(0, |r| r + 1);
    let rt = trig_moments(tau.kappa, top);
    let re = trig_moments(eps.kappa, top);
    let s = 1.0 / (n as f64).sqrt();
    let ramp = phase_ramp(rows.iter().copied(), tau.mu + eps.mu);
    CVector::from_iterator(
        rows.len(),
        rows.iter()
            .zip(ramp)
            .map(|(&k, p)| p * (rt[k] * re[k] * s)),
    )
}

/// Expected dictionary `E[A(theta, eps)]` over `rows`.
pub fn expected_dictionary_rows(
    beliefs: &[PathBelief],
    eps: &VonMises,
    dims: ArrayDims,
    rows: &[usize],
) -> CMatrix {
    let m = dims.m();
    let mut out = CMatrix::zeros(rows.len() * m, beliefs.len());
    for (l, pb) in beliefs.iter().enumerate() {
        let a = expected_delay_rows(&pb.tau, eps, dims.n, rows);
        let b = expected_spatial(pb, dims.m1, dims.m2);
        out.set_column(l, &kron(&a, &b));
    }
    out
}

/// `E[A^H A]` over all subcarriers; independent of the synchronization error.
pub fn expected_gram(beliefs: &[PathBelief], dims: ArrayDims) -> CMatrix {
    let rows: Vec<usize> = (0..dims.n).collect();
    expected_gram_rows(beliefs, dims, &rows)
}

/// `E[A^H A]` restricted to the subcarriers in `rows`. Off-diagonal entries
/// factor into products of expected steering inner products; diagonal
/// entries are `|rows| / N` since every atom has constant modulus.
pub fn expected_gram_rows(beliefs: &[PathBelief], dims: ArrayDims, rows: &[usize]) -> CMatrix {
    let l = beliefs.len();
    let point = VonMises::point(0.0);
    let delays: Vec<CVector> = beliefs
        .iter()
        .map(|b| expected_delay_rows(&b.tau, &point, dims.n, rows))
        .collect();
    let spatial: Vec<CVector> = beliefs
        .iter()
        .map(|b| expected_spatial(b, dims.m1, dims.m2))
        .collect();
    let diag = rows.len() as f64 / dims.n as f64;
    let mut g = CMatrix::zeros(l, l);
    for i in 0..l {
        g[(i, i)] = Complex64::from(diag);
        for j in (i + 1)..l {
            let v = delays[i].dotc(&delays[j]) * spatial[i].dotc(&spatial[j]);
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
    }
    g
}

/// `a_N(tau) b(theta, phi)^T` as an `N x M` matrix.
pub fn rank_one(path: &PathParams, eps: f64, dims: ArrayDims) -> CMatrix {
    let a = steering(dims.n, path.tau + eps);
    let b = spatial_steering(path.theta, path.phi, dims.m1, dims.m2);
    a * b.transpose()
}

/// Full-band reconstruction from static paths (shifted by `eps`) and dynamic
/// paths (unshifted).
pub fn reconstruct(
    static_paths: &[PathParams],
    static_coeffs: &[Complex64],
    eps: f64,
    dynamic_paths: &[PathParams],
    dynamic_coeffs: &[Complex64],
    dims: ArrayDims,
) -> Result<CMatrix> {
    if static_paths.len() != static_coeffs.len() || dynamic_paths.len() != dynamic_coeffs.len() {
        return Err(Error::Dimension(
            "coefficient count does not match path count".into(),
        ));
    }
    let mut h = CMatrix::zeros(dims.n, dims.m());
    for (p, c) in static_paths.iter().zip(static_coeffs) {
        h += rank_one(p, eps, dims) * *c;
    }
    for (p, c) in dynamic_paths.iter().zip(dynamic_coeffs) {
        h += rank_one(p, 0.0, dims) * *c;
    }
    Ok(h)
}

/// `10 log10(||est - truth||^2 / ||truth||^2)`, floored at [`NMSE_FLOOR_DB`].
pub fn nmse_db(estimate: &CMatrix, truth: &CMatrix) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "estimate {:?} vs truth {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let t = truth.norm_squared();
    if t == 0.0 {
        return Err(Error::ZeroTruth);
    }
    let e = (estimate - truth).norm_squared();
    if e == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (e / t).log10()).max(NMSE_FLOOR_DB))
}

/// Flattens `N x M` with the antenna index fastest.
pub fn vectorize(h: &CMatrix) -> CVector {
    let (r, c) = h.shape();
    CVector::from_fn(r * c, |i, _| h[(i / c, i % c)])
}

/// Inverse of [`vectorize`].
pub fn unvectorize(y: &CVector, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |r, c| y[r * cols + c])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn steering_examples() {
        assert_eq!(steering(1, 1.7)[0], c(1.0, 0.0));
        let a = steering(2, 0.0);
        assert!((a[0] - c(0.5f64.sqrt(), 0.0)).norm() < 1e-15);
        let a = steering(4, std::f64::consts::FRAC_PI_2);
        let want = [c(0.5, 0.0), c(0.0, -0.5), c(-0.5, 0.0), c(0.0, 0.5)];
        for (x, w) in a.iter().zip(want) {
            assert!((x - w).norm() < 1e-15);
        }
    }

    #[test]
    fn spatial_with_single_zenith_element() {
        let b = spatial_steering(0.4, 2.0, 4, 1);
        assert!((b - steering(4, 0.4)).norm() < 1e-15);
        let b = spatial_steering(0.0, 0.0, 2, 2);
        assert!(b.iter().all(|v| (v - c(0.5, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn expected_steering_limits() {
        let vm = VonMises::new(0.9, 1e8);
        let e = expected_steering(16, &vm);
        assert!((e - steering(16, 0.9)).camax() < 1e-6);
        let e = expected_steering(5, &VonMises::uniform());
        assert!((e[0] - c(1.0 / 5f64.sqrt(), 0.0)).norm() < 1e-15);
        assert!(e.iter().skip(1).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn nmse_examples() {
        let t = CMatrix::from_element(3, 2, c(1.0, -2.0));
        assert_eq!(nmse_db(&t, &t).unwrap(), NMSE_FLOOR_DB);
        assert!((nmse_db(&CMatrix::zeros(3, 2), &t).unwrap()).abs() < 1e-12);
        let e = &t * c(1.01, 0.0);
        assert!((nmse_db(&e, &t).unwrap() + 40.0).abs() < 1e-9);
        assert!(matches!(
            nmse_db(&t, &CMatrix::zeros(3, 2)),
            Err(Error::ZeroTruth)
        ));
    }

    #[test]
    fn vectorize_is_antenna_fastest() {
        let h = CMatrix::from_fn(3, 4, |r, c_| c(r as f64, c_ as f64));
        let y = vectorize(&h);
        assert_eq!(y[1 * 4 + 2], c(1.0, 2.0));
        assert_eq!(unvectorize(&y, 3, 4), h);
    }

    #[test]
    fn reconstruct_zero_and_unit() {
        let dims = ArrayDims::new(8, 2, 2);
        let p = [PathParams::new(0.3, 1.0, 2.0)];
        let h = reconstruct(&p, &[c(0.0, 0.0)], 0.0, &[], &[], dims).unwrap();
        assert_eq!(h.norm(), 0.0);
        let h = reconstruct(&p, &[c(1.0, 0.0)], 0.0, &[], &[], dims).unwrap();
        assert!((h.norm() - 1.0).abs() < 1e-14);
        assert!(reconstruct(&p, &[], 0.0, &[], &[], dims).is_err());
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(TAU), 0.0);
        assert!(wrap_angle(-1e-18) < TAU);
        assert!((wrap_angle(-0.5) - (TAU - 0.5)).abs() < 1e-15);
    }
}
