//! Maximization of trigonometric objectives `f(w) = Re{eta^H a_x(w)}` over
//! the circle: zero-padded FFT coarse search followed by safeguarded Newton
//! refinement, and conversion of the peak curvature into a von Mises belief.

use std::cell::RefCell;
use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::beliefs::{vm_from_curvature, VonMises};
use crate::error::{Error, Result};
use crate::manifold::wrap_angle;
use crate::{CMatrix, CVector};

const TIE_TOLERANCE: f64 = 1e-12;
const STEP_TOLERANCE: f64 = 1e-10;
const MAX_BACKTRACKS: usize = 40;
/// Grid peaks refined per search.
pub const MAX_CANDIDATES: usize = 8;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

/// Coarse-grid offsetting factor and Newton iteration budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub offsets: usize,
    pub max_iters: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            offsets: 4,
            max_iters: 10,
        }
    }
}

/// `f(w) = Re{eta^H a_x(w)} = Re{sum_k conj(eta_k) e^{-j k w}} / sqrt(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralObjective {
    eta: CVector,
}

impl SpectralObjective {
    pub fn new(eta: CVector) -> Self {
        SpectralObjective { eta }
    }

    /// Objective equal to `scale * v(w)^H q v(w)` with
    /// `v_i(w) = e^{-j positions_i w}` for Hermitian `q`, expressed on a
    /// steering vector of length `x`. Entries of `q` whose index difference
    /// does not occur contribute nothing; `x` must exceed every difference.
    pub fn from_hermitian_form(q: &CMatrix, positions: &[usize], scale: f64, x: usize) -> Self {
        let mut h = vec![Complex64::new(0.0, 0.0); x];
        for (i, &pi) in positions.iter().enumerate() {
            for (k, &pk) in positions.iter().enumerate() {
                if pi >= pk {
                    h[pi - pk] += q[(i, k)];
                }
            }
        }
        let root = (x as f64).sqrt();
        let eta = CVector::from_iterator(
            x,
            h.iter().enumerate().map(|(d, v)| {
                if d == 0 {
                    Complex64::from(v.re * scale * root)
                } else {
                    v * (2.0 * scale * root)
                }
            }),
        );
        SpectralObjective { eta }
    }

    pub fn eta(&self) -> &CVector {
        &self.eta
    }

    pub fn eta_mut(&mut self) -> &mut CVector {
        &mut self.eta
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    pub fn value(&self, omega: f64) -> f64 {
        self.derivatives(omega).0
    }

    /// `(f, f', f'')` at `omega`.
    pub fn derivatives(&self, omega: f64) -> (f64, f64, f64) {
        let mut f = 0.0;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        let omega = wrap_angle(omega);
        for (k, e) in self.eta.iter().enumerate() {
            let kf = k as f64;
            let t = e.conj() * Complex64::from_polar(1.0, -kf * omega);
            f += t.re;
            // d/dw of t is -j k t
            d1 += kf * t.im;
            d2 -= kf * kf * t.re;
        }
        let s = 1.0 / (self.eta.len() as f64).sqrt();
        (f * s, d1 * s, d2 * s)
    }

    /// Whether the objective is constant in `omega`.
    pub fn is_flat(&self) -> bool {
        self.eta.iter().skip(1).all(|v| *v == Complex64::new(0.0, 0.0))
    }

    /// Objective values on the `x * offsets` grid `w_g = 2 pi g / (x offsets)`.
    pub fn grid_values(&self, offsets: usize) -> Vec<f64> {
        let g = self.eta.len() * offsets.max(1);
        let mut buf = vec![Complex64::new(0.0, 0.0); g];
        for (b, e) in buf.iter_mut().zip(self.eta.iter()) {
            *b = e.conj();
        }
        forward_fft(g).process(&mut buf);
        let s = 1.0 / (self.eta.len() as f64).sqrt();
        buf.iter().map(|v| v.re * s).collect()
    }

    fn tie_scale(&self) -> f64 {
        self.eta.iter().map(|v| v.norm()).sum::<f64>() / (self.eta.len() as f64).sqrt()
    }
}

/// Index of the largest value; values within the tie tolerance of the
/// maximum resolve to the smallest index.
pub fn argmax_with_ties(values: &[f64], scale: f64) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOLERANCE * scale.max(f64::MIN_POSITIVE);
    values
        .iter()
        .position(|&v| v >= best - tol)
        .unwrap_or(0)
}

/// Grid maximizer over `2 pi g / (x offsets)`, `g = 0..x offsets`.
pub fn coarse_search(obj: &SpectralObjective, offsets: usize) -> Result<f64> {
    if obj.is_empty() || obj.eta.iter().all(|v| v.norm() == 0.0) {
        return Err(Error::DegenerateObjective);
    }
    let offsets = offsets.max(1);
    let values = obj.grid_values(offsets);
    let g = argmax_with_ties(&values, obj.tie_scale());
    Ok(TAU * g as f64 / values.len() as f64)
}

/// Newton refinement from a coarse peak. The iterate stays within half a
/// coarse grid spacing of `omega0` and never lowers the objective. Returns the
/// refined point and the curvature used for the belief.
pub fn newton_refine(
    obj: &SpectralObjective,
    omega0: f64,
    offsets: usize,
    max_iters: usize,
) -> (f64, f64) {
    let spacing = TAU / (obj.len() * offsets.max(1)) as f64;
    let radius = 0.5 * spacing;
    let (_, _, c0) = obj.derivatives(omega0);
    if c0 < 0.0 {
        if let Some(r) = newton_from(obj, omega0, omega0, radius, max_iters) {
            return r;
        }
    } else {
        // bisect toward the better neighbouring grid point and retry once
        let left = obj.value(omega0 - spacing);
        let right = obj.value(omega0 + spacing);
        let dir = if right > left { 1.0 } else { -1.0 };
        let start = omega0 + dir * 0.5 * radius;
        if obj.value(start) >= obj.value(omega0) && obj.derivatives(start).2 < 0.0 {
            if let Some(r) = newton_from(obj, start, omega0, radius, max_iters) {
                return r;
            }
        }
    }
    let f0 = obj.value(omega0);
    let second =
        (obj.value(omega0 + spacing) - 2.0 * f0 + obj.value(omega0 - spacing)) / (spacing * spacing);
    (wrap_angle(omega0), second)
}

fn newton_from(
    obj: &SpectralObjective,
    start: f64,
    center: f64,
    radius: f64,
    max_iters: usize,
) -> Option<(f64, f64)> {
    let mut w = start;
    let (mut f, mut d1, mut d2) = obj.derivatives(w);
    for _ in 0..max_iters {
        if d2 >= 0.0 {
            break;
        }
        let step = -d1 / d2;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..MAX_BACKTRACKS {
            let cand = (w + t * step).clamp(center - radius, center + radius);
            let (fc, d1c, d2c) = obj.derivatives(cand);
            if fc >= f {
                moved = cand != w;
                w = cand;
                f = fc;
                d1 = d1c;
                d2 = d2c;
                break;
            }
            t *= 0.5;
        }
        if !moved || (t * step).abs() < STEP_TOLERANCE {
            break;
        }
    }
    if d2 < 0.0 {
        Some((wrap_angle(w), d2))
    } else {
        None
    }
}

/// Peak location, value and curvature of a spectral search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub omega: f64,
    pub value: f64,
    pub curvature: f64,
}

/// Coarse search followed by Newton refinement. Every local grid maximum
/// within the interpolation bound `h^2 max|f''| / 8` of the grid maximum can
/// hide the true peak, so up to [`MAX_CANDIDATES`] of them are refined, each
/// from itself and from its uphill neighbour (a peak may sit more than half
/// a spacing from its highest sample); the highest refined peak wins and
/// near ties keep the grid maximum.
pub fn search(obj: &SpectralObjective, cfg: SearchConfig) -> Result<SearchResult> {
    if obj.is_empty() || obj.eta.iter().all(|v| v.norm() == 0.0) {
        return Err(Error::DegenerateObjective);
    }
    let offsets = cfg.offsets.max(1);
    let values = obj.grid_values(offsets);
    let g = values.len();
    let scale = obj.tie_scale();
    let best = argmax_with_ties(&values, scale);
    let h = TAU / g as f64;
    let x = obj.len() as f64;
    let curvature_bound: f64 = obj
        .eta
        .iter()
        .enumerate()
        .map(|(k, v)| (k * k) as f64 * v.norm())
        .sum::<f64>()
        / x.sqrt();
    let floor = values[best] - h * h / 8.0 * curvature_bound;
    let mut candidates: Vec<usize> = (0..g)
        .filter(|&i| {
            i != best
                && values[i] >= floor
                && values[i] >= values[(i + g - 1) % g]
                && values[i] >= values[(i + 1) % g]
        })
        .collect();
    candidates.sort_by(|a, b| values[*b].total_cmp(&values[*a]).then(a.cmp(b)));
    candidates.truncate(MAX_CANDIDATES - 1);
    candidates.insert(0, best);
    let tol = TIE_TOLERANCE * scale.max(f64::MIN_POSITIVE);
    let mut winner: Option<SearchResult> = None;
    for i in candidates {
        let uphill = (if obj.derivatives(h * i as f64).1 >= 0.0 { i + 1 } else { i + g - 1 }) % g;
        for start in [i, uphill] {
            let (omega, curvature) = newton_refine(obj, h * start as f64, offsets, cfg.max_iters);
            let value = obj.value(omega);
            if winner.is_none_or(|w| value > w.value + tol) {
                winner = Some(SearchResult {
                    omega,
                    value,
                    curvature,
                });
            }
        }
    }
    Ok(winner.expect("the grid maximum is always a candidate"))
}

/// Coarse search, Newton refinement and Laplace-to-von-Mises projection.
/// Objectives that do not depend on the variable yield the uniform belief.
pub fn search_and_project(obj: &SpectralObjective, cfg: SearchConfig) -> Result<VonMises> {
    if obj.len() <= 1 || obj.is_flat() {
        if obj.eta.iter().all(|v| v.norm() == 0.0) {
            return Err(Error::DegenerateObjective);
        }
        return Ok(VonMises::uniform());
    }
    let r = search(obj, cfg)?;
    if r.curvature < 0.0 {
        vm_from_curvature(r.omega, r.curvature)
    } else {
        Ok(VonMises::new(r.omega, 0.0))
    }
}
