//! Belief families used by the message-passing estimators: von Mises for
//! circular parameters, complex Gaussian for coefficients and
//! Bernoulli-Gaussian for possibly inactive dynamic coefficients.

mod bessel;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::wrap_angle;
use crate::{CMatrix, CVector};

/// Concentration used to represent a point mass.
pub const KAPPA_MAX: f64 = 1e12;

const INVERSE_MAX_ITERS: usize = 400;

/// `I_1(kappa) / I_0(kappa)`.
pub fn bessel_ratio(kappa: f64) -> f64 {
    bessel::ratio_step(1, kappa.max(0.0))
}

/// `1 - I_1(kappa) / I_0(kappa)` without cancellation at large `kappa`.
pub fn bessel_ratio_complement(kappa: f64) -> f64 {
    bessel::ratio_complement(kappa.max(0.0))
}

/// Trigonometric moments `I_k(kappa) / I_0(kappa)` for `k = 0..len`. A
/// belief at the concentration cap is treated as an exact point mass.
pub fn trig_moments(kappa: f64, len: usize) -> Vec<f64> {
    if kappa >= KAPPA_MAX {
        return vec![1.0; len];
    }
    bessel::moment_sequence(kappa.max(0.0), len)
}

/// Inverse of [`bessel_ratio`], capped at [`KAPPA_MAX`].
pub fn bessel_ratio_inverse(r: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::RatioOutOfRange(r));
    }
    Ok(kappa_from_deficit(1.0 - r))
}

/// Solves `1 - A(kappa) = deficit` by bisection on the complement, which is
/// strictly decreasing from 1 at `kappa = 0` to 0 at infinity.
fn kappa_from_deficit(deficit: f64) -> f64 {
    if deficit >= 1.0 {
        return 0.0;
    }
    if deficit <= bessel::ratio_complement(KAPPA_MAX) {
        return KAPPA_MAX;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while bessel::ratio_complement(hi) > deficit {
        lo = hi;
        hi *= 2.0;
    }
    hi = hi.min(KAPPA_MAX);
    for _ in 0..INVERSE_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if bessel::ratio_complement(mid) > deficit {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Von Mises density on the circle, `exp(kappa cos(x - mu)) / (2 pi I_0(kappa))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VonMises {
    pub mu: f64,
    pub kappa: f64,
}

impl VonMises {
    pub fn new(mu: f64, kappa: f64) -> Self {
        VonMises {
            mu: wrap_angle(mu),
            kappa: kappa.clamp(0.0, KAPPA_MAX),
        }
    }

    pub fn uniform() -> Self {
        VonMises { mu: 0.0, kappa: 0.0 }
    }

    pub fn point(mu: f64) -> Self {
        VonMises::new(mu, KAPPA_MAX)
    }

    /// Natural parameter `kappa e^{j mu}`.
    pub fn resultant(&self) -> Complex64 {
        Complex64::from_polar(self.kappa, self.mu)
    }

    pub fn from_resultant(z: Complex64) -> Self {
        let kappa = z.norm();
        if kappa == 0.0 {
            return VonMises::uniform();
        }
        VonMises::new(z.arg(), kappa)
    }

    /// First circular moment `E[e^{j x}]`.
    pub fn first_moment(&self) -> Complex64 {
        Complex64::from_polar(bessel_ratio(self.kappa), self.mu)
    }

    /// Moment-matching projection of a sample cloud: the result reproduces
    /// the cloud's `E[cos x]` and `E[sin x]`.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Dimension("empty sample set".into()));
        }
        let m = samples
            .iter()
            .map(|&x| Complex64::from_polar(1.0, x))
            .sum::<Complex64>()
            / samples.len() as f64;
        let r = m.norm();
        if r >= 1.0 {
            return Ok(VonMises::point(m.arg()));
        }
        Ok(VonMises::new(m.arg(), bessel_ratio_inverse(r)?))
    }

    pub fn is_point_mass(&self) -> bool {
        self.kappa >= KAPPA_MAX
    }
}

/// Converts a local maximum with curvature `second_derivative` into a von
/// Mises belief by matching the Laplace variance, `A(kappa) = exp(-s2 / 2)`.
pub fn vm_from_curvature(mu_hat: f64, second_derivative: f64) -> Result<VonMises> {
    if second_derivative.is_nan() || second_derivative >= 0.0 {
        return Err(Error::NotAMaximum { second_derivative });
    }
    let variance = -1.0 / second_derivative;
    let deficit = -(-0.5 * variance).exp_m1();
    Ok(VonMises::new(mu_hat, kappa_from_deficit(deficit)))
}

/// Product of two von Mises densities (normalized).
pub fn vm_multiply(a: VonMises, b: VonMises) -> VonMises {
    VonMises::from_resultant(a.resultant() + b.resultant())
}

/// Delay, azimuth and zenith beliefs of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathBelief {
    pub tau: VonMises,
    pub theta: VonMises,
    pub phi: VonMises,
}

impl PathBelief {
    pub fn point(tau: f64, theta: f64, phi: f64) -> Self {
        PathBelief {
            tau: VonMises::point(tau),
            theta: VonMises::point(theta),
            phi: VonMises::point(phi),
        }
    }
}

/// Complex Gaussian belief over a coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: CVector,
    pub covariance: CMatrix,
}

impl GaussianBelief {
    pub fn zeros(len: usize) -> Self {
        GaussianBelief {
            mean: CVector::zeros(len),
            covariance: CMatrix::zeros(len, len),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Moment-matching projection: sample mean and sample covariance
    /// `E[(x - m)(x - m)^H]`.
    pub fn from_samples(samples: &[CVector]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Dimension("empty sample set".into()))?;
        let n = first.len();
        let mut mean = CVector::zeros(n);
        for s in samples {
            if s.len() != n {
                return Err(Error::Dimension("ragged sample set".into()));
            }
            mean += s;
        }
        mean /= Complex64::from(samples.len() as f64);
        let mut covariance = CMatrix::zeros(n, n);
        for s in samples {
            let d = s - &mean;
            covariance += &d * d.adjoint();
        }
        covariance /= Complex64::from(samples.len() as f64);
        Ok(GaussianBelief { mean, covariance })
    }
}

/// Complex Gaussian density `CN(x; mean, cov)`.
pub fn complex_gaussian_pdf(x: &CVector, mean: &CVector, cov: &CMatrix) -> Result<f64> {
    let n = x.len();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned {
            context: "Gaussian covariance".into(),
            condition: f64::INFINITY,
        })?;
    let d = x - mean;
    let q = d.dotc(&chol.solve(&d)).re;
    let det: f64 = chol.l().diagonal().iter().map(|v| v.norm_sqr()).product();
    Ok((-q).exp() / (det * PI.powi(n as i32)))
}

/// Posterior of `beta ~ CN(prior_mean, prior_cov)` observed through
/// `observation = design * beta + CN(0, noise_variance I)`.
pub fn gaussian_condition(
    prior_mean: &CVector,
    prior_cov: &CMatrix,
    design: &CMatrix,
    observation: &CVector,
    noise_variance: f64,
) -> Result<GaussianBelief> {
    let l = prior_mean.len();
    if design.ncols() != l || prior_cov.shape() != (l, l) || design.nrows() != observation.len() {
        return Err(Error::Dimension(format!(
            "design {}x{}, prior {}, observation {}",
            design.nrows(),
            design.ncols(),
            l,
            observation.len()
        )));
    }
    if noise_variance <= 0.0 {
        return Err(Error::Config(vec!["noise_variance must be positive".into()]));
    }
    let prior_precision = linalg::hermitian_inverse(prior_cov, "prior covariance")?;
    let precision = design.adjoint() * design / Complex64::from(noise_variance) + &prior_precision;
    let covariance = linalg::hermitian_inverse(&precision, "posterior precision")?;
    let rhs = design.adjoint() * observation / Complex64::from(noise_variance) + prior_precision * prior_mean;
    let mean = &covariance * rhs;
    Ok(GaussianBelief { mean, covariance })
}

/// Spike-and-slab belief: `(1 - lambda) delta_0 + lambda CN(mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliGaussian {
    pub lambda: f64,
    pub mean: Complex64,
    pub variance: f64,
}

impl BernoulliGaussian {
    /// Posterior mean `lambda * mean`.
    pub fn estimate(&self) -> Complex64 {
        self.mean * self.lambda
    }
}

/// Combines a Bernoulli-Gaussian prior with a Gaussian likelihood message
/// `CN(beta; likelihood_mean, likelihood_variance)`.
pub fn bg_posterior(
    prior: BernoulliGaussian,
    likelihood_mean: Complex64,
    likelihood_variance: f64,
) -> BernoulliGaussian {
    let vg = likelihood_variance;
    let vp = prior.variance.max(0.0);
    let variance = if vp == 0.0 { 0.0 } else { vp * vg / (vp + vg) };
    let mean = if vp == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        likelihood_mean * (vp / (vp + vg))
    };
    let lambda = if prior.lambda <= 0.0 {
        0.0
    } else if prior.lambda >= 1.0 {
        1.0
    } else {
        // log C1 - log C0 with C0 = (1-l) CN(0; mu_g, v_g), C1 = l CN(0; mu_g, v_p + v_g)
        let m2 = likelihood_mean.norm_sqr();
        let log_c0 = (1.0 - prior.lambda).ln() - vg.ln() - m2 / vg;
        let log_c1 = prior.lambda.ln() - (vp + vg).ln() - m2 / (vp + vg);
        let z = log_c1 - log_c0;
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    };
    BernoulliGaussian {
        lambda,
        mean,
        variance,
    }
}
