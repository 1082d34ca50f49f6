//! Ratios of modified Bessel functions of the first kind.
//!
//! Everything here works with ratios `I_k(x) / I_{k-1}(x)` so that no
//! exponentially scaled Bessel values are ever formed; this keeps the
//! routines finite for concentrations up to the `1e12` cap.

const LENTZ_TINY: f64 = 1e-300;
const LENTZ_EPS: f64 = 1e-16;
const LENTZ_MAX_TERMS: usize = 100_000;

/// Tail `t` of Perron's continued fraction, where
/// `I_nu(x) / I_{nu-1}(x) = x / (2 nu + x - t)` and
/// `t = (2nu+1)x / (2nu+1+2x - (2nu+3)x / (2nu+2+2x - ...))`.
///
/// Perron's form converges in a handful of terms for large `x`, which is the
/// regime where the classical Gauss fraction is hopeless.
fn perron_tail(nu: f64, x: f64) -> f64 {
    // t = a1 / u with u = b1 - a2/(b2 - a3/(b3 - ...)), u by modified Lentz
    let a1 = (2.0 * nu + 1.0) * x;
    let b1 = 2.0 * nu + 1.0 + 2.0 * x;
    let mut f = b1;
    let mut c = f;
    let mut d = 0.0;
    for k in 2..=LENTZ_MAX_TERMS {
        let kf = k as f64;
        let a = -(2.0 * nu + 2.0 * kf - 1.0) * x;
        let b = 2.0 * nu + kf + 2.0 * x;
        d = b + a * d;
        if d == 0.0 {
            d = LENTZ_TINY;
        }
        c = b + a / c;
        if c == 0.0 {
            c = LENTZ_TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < LENTZ_EPS {
            break;
        }
    }
    a1 / f
}

/// `I_nu(x) / I_{nu-1}(x)` for `nu >= 1`, `x >= 0`.
pub(crate) fn ratio_step(nu: usize, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let nu = nu as f64;
    x / (2.0 * nu + x - perron_tail(nu, x))
}

/// `1 - I_1(x)/I_0(x)`, evaluated without cancellation for large `x`.
pub(crate) fn ratio_complement(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let t = perron_tail(1.0, x);
    (2.0 - t) / (2.0 + x - t)
}

/// Trigonometric moments `I_k(x)/I_0(x)` for `k = 0..len`.
pub(crate) fn moment_sequence(x: f64, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    if len == 0 {
        return out;
    }
    out[0] = 1.0;
    if len == 1 || x == 0.0 {
        return out;
    }
    let top = len - 1;
    // backward recurrence on rho_k = I_k/I_{k-1}: rho_k = 1/(2k/x + rho_{k+1})
    let mut rho = vec![0.0; len];
    rho[top] = ratio_step(top, x);
    for k in (1..top).rev() {
        rho[k] = 1.0 / (2.0 * k as f64 / x + rho[k + 1]);
    }
    for k in 1..len {
        out[k] = out[k - 1] * rho[k];
    }
    out
}
