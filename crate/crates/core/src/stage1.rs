//! Grid-level quasi-static path estimation with per-measurement
//! synchronization calibration.
//!
//! The estimator alternates between conditional path generation, per-path
//! refinement of delay/azimuth/zenith beliefs, a joint update of each slot's
//! synchronization error and coefficient vector, and EM updates of the path
//! powers and the noise variance.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::beliefs::{vm_from_curvature, GaussianBelief, PathBelief, VonMises};
use crate::ckm::{CkmEntry, CkmRow};
use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::{
    dictionary, expected_delay_rows, expected_dictionary_rows, expected_gram_rows, expected_spatial,
    expected_steering, steering, vectorize, wrap_angle, ArrayDims, PathParams,
};
use crate::sim::MeasurementSet;
use crate::spectral::{search, search_and_project, SearchConfig, SpectralObjective};
use crate::{CMatrix, CVector};

const NOISE_FLOOR: f64 = 1e-12;
const CONVERGENCE_TOL: f64 = 1e-7;

/// How the synchronization errors are treated.
#[derive(Debug, Clone, PartialEq)]
pub enum SyncMode {
    /// Estimated jointly with the coefficients.
    Estimate,
    /// Forced to zero.
    Zero,
    /// Fixed to known per-slot values.
    Known(Vec<f64>),
}

/// How the synchronization error and the coefficients are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientMode {
    /// Coefficients marginalized under their power prior while searching
    /// the synchronization error.
    Joint,
    /// Synchronization error from a matched filter that ignores coefficient
    /// coupling, then least-squares coefficients.
    Separate,
}

/// How paths enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Conditional generation from cross-slot residuals.
    Generation,
    /// Simultaneous orthogonal matching pursuit on an oversampled grid that
    /// ignores synchronization errors.
    Omp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Options {
    /// Maximum number of paths.
    pub budget: usize,
    /// Outer iterations; defaults to `budget + 10`.
    pub max_iters: Option<usize>,
    pub search: SearchConfig,
    pub sync: SyncMode,
    pub coefficients: CoefficientMode,
    pub init: InitMode,
    /// Generation stops when the peak residual energy falls below this
    /// multiple of `noise_variance * M * T * P / N`, the noise energy captured
    /// by one projection.
    pub threshold_factor: f64,
}

impl Stage1Options {
    pub fn new(budget: usize) -> Self {
        Stage1Options {
            budget,
            max_iters: None,
            search: SearchConfig::default(),
            sync: SyncMode::Estimate,
            coefficients: CoefficientMode::Joint,
            init: InitMode::Generation,
            threshold_factor: 3.0,
        }
    }

    pub fn iterations(&self) -> usize {
        self.max_iters.unwrap_or(self.budget + 10)
    }
}

/// Beliefs of the stage-I model.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1State {
    pub paths: Vec<PathBelief>,
    /// Delay prior of each path; uniform unless supplied.
    pub delay_priors: Vec<VonMises>,
    /// Coefficient belief per slot, one entry per path.
    pub coeffs: Vec<GaussianBelief>,
    pub sync: Vec<VonMises>,
    pub powers: Vec<f64>,
    pub noise_variance: f64,
    pub iterations: usize,
}

impl Stage1State {
    /// Empty model with synchronization errors at zero and the noise variance
    /// set from the observation energy at an assumed 0 dB SNR.
    pub fn initial(meas: &MeasurementSet) -> Self {
        let t = meas.n_slots();
        let energy: f64 = meas.observations.iter().map(|y| y.norm_squared()).sum();
        let dim = (meas.pilots.len() * meas.dims.m() * t.max(1)) as f64;
        Stage1State {
            paths: Vec::new(),
            delay_priors: Vec::new(),
            coeffs: vec![GaussianBelief::zeros(0); t],
            sync: vec![VonMises::point(0.0); t],
            powers: Vec::new(),
            noise_variance: (energy / (2.0 * dim)).max(NOISE_FLOOR),
            iterations: 0,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Mean path parameters.
    pub fn path_means(&self) -> Vec<PathParams> {
        self.paths
            .iter()
            .map(|p| PathParams::new(p.tau.mu, p.theta.mu, p.phi.mu))
            .collect()
    }

    /// Mean synchronization errors.
    pub fn sync_means(&self) -> Vec<f64> {
        self.sync.iter().map(|s| s.mu).collect()
    }

    /// Coefficient means of slot `t`.
    pub fn coeff_means(&self, t: usize) -> Vec<Complex64> {
        self.coeffs[t].mean.iter().copied().collect()
    }

    fn add_path(&mut self, belief: PathBelief, power: f64) {
        self.paths.push(belief);
        self.delay_priors.push(VonMises::uniform());
        self.powers.push(power.max(NOISE_FLOOR));
        for c in &mut self.coeffs {
            let l = c.len();
            let mut mean = CVector::zeros(l + 1);
            mean.rows_mut(0, l).copy_from(&c.mean);
            let mut cov = CMatrix::zeros(l + 1, l + 1);
            cov.view_mut((0, 0), (l, l)).copy_from(&c.covariance);
            *c = GaussianBelief {
                mean,
                covariance: cov,
            };
        }
    }
}

/// Result of [`run_stage1`].
#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub entry: CkmEntry,
    pub state: Stage1State,
}

/// Expected delay and spatial factors of every path and slot.
struct Atoms {
    /// `[slot][path]` expected delay vector over the pilot rows.
    delay: Vec<Vec<CVector>>,
    /// `[path]` expected spatial vector.
    spatial: Vec<CVector>,
}

fn atoms(state: &Stage1State, meas: &MeasurementSet) -> Atoms {
    let dims = meas.dims;
    let delay = state
        .sync
        .iter()
        .map(|eps| {
            state
                .paths
                .iter()
                .map(|p| expected_delay_rows(&p.tau, eps, dims.n, &meas.pilots))
                .collect()
        })
        .collect();
    let spatial = state
        .paths
        .iter()
        .map(|p| expected_spatial(p, dims.m1, dims.m2))
        .collect();
    Atoms { delay, spatial }
}

fn outer(a: &CVector, b: &CVector, c: Complex64) -> CMatrix {
    (a * c) * b.transpose()
}

/// `Y(t)` minus the expected contribution of every path except `exclude`.
pub fn residual_per_slot(
    state: &Stage1State,
    meas: &MeasurementSet,
    t: usize,
    exclude: Option<usize>,
) -> CMatrix {
    let dims = meas.dims;
    let mut r = meas.observations[t].clone();
    for (l, p) in state.paths.iter().enumerate() {
        if Some(l) == exclude {
            continue;
        }
        let beta = state.coeffs[t].mean[l];
        if beta == Complex64::new(0.0, 0.0) {
            continue;
        }
        let a = expected_delay_rows(&p.tau, &state.sync[t], dims.n, &meas.pilots);
        let b = expected_spatial(p, dims.m1, dims.m2);
        r -= outer(&a, &b, beta);
    }
    r
}

fn residuals(state: &Stage1State, meas: &MeasurementSet, at: &Atoms) -> Vec<CMatrix> {
    (0..meas.n_slots())
        .map(|t| {
            let mut r = meas.observations[t].clone();
            for l in 0..state.n_paths() {
                let beta = state.coeffs[t].mean[l];
                if beta != Complex64::new(0.0, 0.0) {
                    r -= outer(&at.delay[t][l], &at.spatial[l], beta);
                }
            }
            r
        })
        .collect()
}

fn is_zero(v: &CVector) -> bool {
    v.iter().all(|z| z.norm() == 0.0)
}

/// Delay objective of path `l` given per-slot residuals that exclude it.
pub fn delay_objective(
    state: &Stage1State,
    meas: &MeasurementSet,
    l: usize,
    excluded: &[CMatrix],
) -> SpectralObjective {
    let dims = meas.dims;
    let b = expected_spatial(&state.paths[l], dims.m1, dims.m2);
    let scale = 2.0 / state.noise_variance;
    let mut eta = CVector::zeros(dims.n);
    for (t, r) in excluded.iter().enumerate() {
        let beta = state.coeffs[t].mean[l];
        if beta == Complex64::new(0.0, 0.0) {
            continue;
        }
        let rb = r * b.conjugate();
        let moments = crate::beliefs::trig_moments(state.sync[t].kappa, dims.n);
        let mu = state.sync[t].mu;
        for (i, &n) in meas.pilots.iter().enumerate() {
            // E[e^{j n eps}]
            let shift = Complex64::from_polar(moments[n], n as f64 * mu);
            eta[n] += beta.conj() * shift * rb[i] * scale;
        }
    }
    let prior = state.delay_priors[l];
    if prior.kappa > 0.0 && dims.n > 1 {
        eta[1] += Complex64::from_polar((dims.n as f64).sqrt() * prior.kappa, -prior.mu);
    }
    SpectralObjective::new(eta)
}

/// Refines the delay belief of path `l`; keeps the current belief when the
/// objective carries no information.
pub fn update_delay_belief(
    state: &Stage1State,
    meas: &MeasurementSet,
    l: usize,
    excluded: &[CMatrix],
    cfg: SearchConfig,
) -> Result<VonMises> {
    let obj = delay_objective(state, meas, l, excluded);
    if is_zero(obj.eta()) {
        return Ok(state.paths[l].tau);
    }
    search_and_project(&obj, cfg)
}

/// Azimuth and zenith objectives' coefficient vectors for path `l`, the
/// zenith one built from the supplied azimuth belief.
fn angle_etas(
    state: &Stage1State,
    meas: &MeasurementSet,
    l: usize,
    excluded: &[CMatrix],
    theta: &VonMises,
) -> (CVector, CVector) {
    let dims = meas.dims;
    let (m1, m2) = (dims.m1, dims.m2);
    let scale = 2.0 / state.noise_variance;
    let mut joint = CVector::zeros(m1 * m2);
    for (t, r) in excluded.iter().enumerate() {
        let beta = state.coeffs[t].mean[l];
        if beta == Complex64::new(0.0, 0.0) {
            continue;
        }
        let a = expected_delay_rows(&state.paths[l].tau, &state.sync[t], dims.n, &meas.pilots);
        joint += r.transpose() * a.conjugate() * (beta.conj() * scale);
    }
    let a2 = expected_steering(m2, &state.paths[l].phi).conjugate();
    let a1 = expected_steering(m1, theta).conjugate();
    let eta_theta = CVector::from_fn(m1, |i, _| (0..m2).map(|j| joint[i * m2 + j] * a2[j]).sum());
    let eta_phi = CVector::from_fn(m2, |j, _| (0..m1).map(|i| joint[i * m2 + j] * a1[i]).sum());
    (eta_theta, eta_phi)
}

/// Refines the azimuth belief, then the zenith belief given the new azimuth.
pub fn update_angle_beliefs(
    state: &Stage1State,
    meas: &MeasurementSet,
    l: usize,
    excluded: &[CMatrix],
    cfg: SearchConfig,
) -> Result<(VonMises, VonMises)> {
    let current = state.paths[l];
    let (eta_theta, _) = angle_etas(state, meas, l, excluded, &current.theta);
    let theta = if is_zero(&eta_theta) {
        current.theta
    } else {
        search_and_project(&SpectralObjective::new(eta_theta), cfg)?
    };
    let (_, eta_phi) = angle_etas(state, meas, l, excluded, &theta);
    let phi = if is_zero(&eta_phi) {
        current.phi
    } else {
        search_and_project(&SpectralObjective::new(eta_phi), cfg)?
    };
    Ok((theta, phi))
}

/// Matrix `C` of the synchronization objective `f(eps) = y^H A(eps) C
/// A(eps)^H y`.
pub fn coupling_matrix(state: &Stage1State, gamma: &CMatrix, mode: CoefficientMode) -> Result<CMatrix> {
    let l = state.n_paths();
    let s2 = state.noise_variance;
    match mode {
        CoefficientMode::Joint => {
            let mut k = gamma.clone();
            for i in 0..l {
                k[(i, i)] += Complex64::from(s2 / state.powers[i].max(NOISE_FLOOR));
            }
            Ok(linalg::hermitian_inverse(&k, "coefficient precision")? / Complex64::from(s2))
        }
        CoefficientMode::Separate => Ok(CMatrix::identity(l, l) / Complex64::from(s2)),
    }
}

/// `B[l, i] = (a_l(row_i) b_l)^H y_i` with expected atoms at zero shift, so
/// that `A(eps)^H y = B v(eps)` with `v_i = e^{j row_i eps}`.
pub(crate) fn shift_projection(paths: &[PathBelief], dims: ArrayDims, pilots: &[usize], y: &CMatrix) -> CMatrix {
    let zero = VonMises::point(0.0);
    let mut b = CMatrix::zeros(paths.len(), pilots.len());
    for (l, p) in paths.iter().enumerate() {
        let a = expected_delay_rows(&p.tau, &zero, dims.n, pilots);
        let s = expected_spatial(p, dims.m1, dims.m2);
        let ys = y * s.conjugate();
        for i in 0..pilots.len() {
            b[(l, i)] = a[i].conj() * ys[i];
        }
    }
    b
}

/// Objective over the synchronization error of slot `t`.
pub fn sync_objective(state: &Stage1State, meas: &MeasurementSet, t: usize, c: &CMatrix) -> SpectralObjective {
    let b = shift_projection(&state.paths, meas.dims, &meas.pilots, &meas.observations[t]);
    let m = b.adjoint() * c * &b;
    // v_i = e^{+j p_i eps} is the conjugate of the form's basis, so the
    // quadratic form of M equals the one of conj(M) on e^{-j p_i eps}
    SpectralObjective::from_hermitian_form(&m.conjugate(), &meas.pilots, 1.0, meas.dims.n)
}

/// Updates the synchronization belief and the coefficient belief of slot
/// `t`.
pub fn joint_sync_coeff_update(
    state: &Stage1State,
    meas: &MeasurementSet,
    t: usize,
    gamma: &CMatrix,
    mode: CoefficientMode,
    sync: &SyncMode,
    cfg: SearchConfig,
) -> Result<(VonMises, GaussianBelief)> {
    let l = state.n_paths();
    if l == 0 {
        return Err(Error::Dimension("joint update needs at least one path".into()));
    }
    let eps = match sync {
        SyncMode::Zero => VonMises::point(0.0),
        SyncMode::Known(v) => VonMises::point(v[t]),
        SyncMode::Estimate => {
            let c = coupling_matrix(state, gamma, mode)?;
            let obj = sync_objective(state, meas, t, &c);
            if is_zero(obj.eta()) {
                state.sync[t]
            } else {
                search_and_project(&obj, cfg)?
            }
        }
    };
    let a = expected_dictionary_rows(&state.paths, &VonMises::point(eps.mu), meas.dims, &meas.pilots);
    let y = vectorize(&meas.observations[t]);
    let s2 = state.noise_variance;
    let mut k = gamma.clone();
    match mode {
        CoefficientMode::Joint => {
            for i in 0..l {
                k[(i, i)] += Complex64::from(s2 / state.powers[i].max(NOISE_FLOOR));
            }
        }
        CoefficientMode::Separate => {
            let ridge = 1e-10 * (gamma.trace().re / l as f64).max(NOISE_FLOOR);
            for i in 0..l {
                k[(i, i)] += Complex64::from(ridge);
            }
        }
    }
    let kinv = linalg::hermitian_inverse(&k, "coefficient precision")?;
    let mean = &kinv * (a.adjoint() * y);
    let covariance = kinv * Complex64::from(s2);
    Ok((eps, GaussianBelief { mean, covariance }))
}

/// A path proposed by the generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratedPath {
    pub belief: PathBelief,
    /// Peak of the cross-slot residual energy `sum_t ||a^H U_t||^2`.
    pub peak: f64,
}

/// Proposes a new path from the cross-slot residuals, or `None` when the
/// stopping criterion fires.
pub fn generate_path(
    state: &Stage1State,
    meas: &MeasurementSet,
    resid: &[CMatrix],
    cfg: SearchConfig,
    threshold_factor: f64,
) -> Result<Option<GeneratedPath>> {
    let dims = meas.dims;
    let (n, m1, m2) = (dims.n, dims.m1, dims.m2);
    let t_slots = meas.n_slots();
    let s2 = state.noise_variance;
    let threshold = threshold_factor * s2 * (dims.m() * t_slots * meas.pilots.len()) as f64 / n as f64;
    // U_t = diag(e^{j n eps_t}) R_t over the pilot rows
    let shifted: Vec<CMatrix> = resid
        .iter()
        .zip(&state.sync)
        .map(|(r, eps)| {
            let mut u = r.clone();
            for (i, &row) in meas.pilots.iter().enumerate() {
                let ph = Complex64::from_polar(1.0, row as f64 * eps.mu);
                for v in u.row_mut(i).iter_mut() {
                    *v *= ph;
                }
            }
            u
        })
        .collect();
    let p = meas.pilots.len();
    let mut q = CMatrix::zeros(p, p);
    for u in &shifted {
        q += u * u.adjoint();
    }
    let delay_obj = SpectralObjective::from_hermitian_form(&q, &meas.pilots, 1.0 / n as f64, n);
    if is_zero(delay_obj.eta()) {
        return Ok(None);
    }
    let d = search(&delay_obj, cfg)?;
    if !(d.value > threshold) {
        return Ok(None);
    }
    let tau = curvature_belief(d.omega, d.curvature / s2);

    // delay-compressed residuals Z_t (M1 x M2)
    let a_rows: Vec<Complex64> = meas
        .pilots
        .iter()
        .map(|&row| Complex64::from_polar(1.0 / (n as f64).sqrt(), -(row as f64) * tau.mu))
        .collect();
    let a_rows = CVector::from_vec(a_rows);
    let z: Vec<CMatrix> = shifted
        .iter()
        .map(|u| {
            let v = u.transpose() * a_rows.conjugate();
            CMatrix::from_fn(m1, m2, |i, j| v[i * m2 + j])
        })
        .collect();
    let mut q1 = CMatrix::zeros(m1, m1);
    for zt in &z {
        q1 += zt * zt.adjoint();
    }
    let positions1: Vec<usize> = (0..m1).collect();
    let theta = angle_search(&q1, &positions1, 1.0 / m1 as f64, s2, cfg)?;
    let a1 = steering(m1, theta.mu).conjugate();
    let mut q2 = CMatrix::zeros(m2, m2);
    for zt in &z {
        let w = zt.transpose() * &a1;
        q2 += &w * w.adjoint();
    }
    let positions2: Vec<usize> = (0..m2).collect();
    let phi = angle_search(&q2, &positions2, 1.0 / m2 as f64, s2, cfg)?;
    Ok(Some(GeneratedPath {
        belief: PathBelief { tau, theta, phi },
        peak: d.value,
    }))
}

fn curvature_belief(omega: f64, curvature: f64) -> VonMises {
    if curvature < 0.0 {
        vm_from_curvature(omega, curvature).unwrap_or(VonMises::new(omega, 0.0))
    } else {
        VonMises::new(omega, 0.0)
    }
}

fn angle_search(q: &CMatrix, positions: &[usize], scale: f64, s2: f64, cfg: SearchConfig) -> Result<VonMises> {
    let x = positions.len();
    let obj = SpectralObjective::from_hermitian_form(q, positions, scale, x);
    if x <= 1 || obj.is_flat() || is_zero(obj.eta()) {
        return Ok(VonMises::uniform());
    }
    let r = search(&obj, cfg)?;
    Ok(curvature_belief(r.omega, r.curvature / s2))
}

/// EM updates of the path powers and the noise variance.
pub fn em_update(state: &mut Stage1State, meas: &MeasurementSet) {
    let t_slots = meas.n_slots() as f64;
    for l in 0..state.n_paths() {
        let mean_sq: f64 = state.coeffs.iter().map(|c| c.mean[l].norm_sqr()).sum::<f64>() / t_slots;
        state.powers[l] = (mean_sq + state.coeffs[0].covariance[(l, l)].re).max(NOISE_FLOOR);
    }
    let at = atoms(state, meas);
    let energy: f64 = residuals(state, meas, &at).iter().map(|r| r.norm_squared()).sum();
    let dim = (meas.pilots.len() * meas.dims.m() * meas.n_slots()) as f64;
    state.noise_variance = (energy / dim).max(NOISE_FLOOR);
}

fn joint_sweep(state: &mut Stage1State, meas: &MeasurementSet, opts: &Stage1Options) -> Result<()> {
    if state.n_paths() == 0 {
        return Ok(());
    }
    let gamma = expected_gram_rows(&state.paths, meas.dims, &meas.pilots);
    let snapshot: &Stage1State = state;
    let updates = (0..meas.n_slots())
        .into_par_iter()
        .map(|t| joint_sync_coeff_update(snapshot, meas, t, &gamma, opts.coefficients, &opts.sync, opts.search))
        .collect::<Result<Vec<_>>>()?;
    for (t, (eps, coeff)) in updates.into_iter().enumerate() {
        state.sync[t] = eps;
        state.coeffs[t] = coeff;
    }
    Ok(())
}

fn refine_paths(state: &mut Stage1State, meas: &MeasurementSet, cfg: SearchConfig) -> Result<()> {
    let mut order: Vec<usize> = (0..state.n_paths()).collect();
    order.sort_by(|&a, &b| state.powers[b].total_cmp(&state.powers[a]).then(a.cmp(&b)));
    let at = atoms(state, meas);
    let mut resid = residuals(state, meas, &at);
    let dims = meas.dims;
    for l in order {
        // add path l back
        let mut excluded: Vec<CMatrix> = resid.clone();
        let old_spatial = expected_spatial(&state.paths[l], dims.m1, dims.m2);
        for (t, r) in excluded.iter_mut().enumerate() {
            let beta = state.coeffs[t].mean[l];
            let a = expected_delay_rows(&state.paths[l].tau, &state.sync[t], dims.n, &meas.pilots);
            *r += outer(&a, &old_spatial, beta);
        }
        state.paths[l].tau = update_delay_belief(state, meas, l, &excluded, cfg)?;
        let (theta, phi) = update_angle_beliefs(state, meas, l, &excluded, cfg)?;
        state.paths[l].theta = theta;
        state.paths[l].phi = phi;
        let new_spatial = expected_spatial(&state.paths[l], dims.m1, dims.m2);
        for (t, r) in excluded.into_iter().enumerate() {
            let beta = state.coeffs[t].mean[l];
            let a = expected_delay_rows(&state.paths[l].tau, &state.sync[t], dims.n, &meas.pilots);
            resid[t] = r - outer(&a, &new_spatial, beta);
        }
    }
    Ok(())
}

/// Greedy simultaneous OMP over an oversampled delay/azimuth/zenith grid
/// with synchronization errors ignored.
pub fn omp_paths(meas: &MeasurementSet, count: usize) -> Vec<PathParams> {
    let dims = meas.dims;
    let (gn, g1, g2) = (2 * dims.n, 2 * dims.m1, 2 * dims.m2);
    let mut grid = Vec::with_capacity(gn * g1 * g2);
    for i in 0..gn {
        for j in 0..g1 {
            for k in 0..g2 {
                grid.push(PathParams::new(
                    std::f64::consts::TAU * i as f64 / gn as f64,
                    if dims.m1 > 1 { std::f64::consts::TAU * j as f64 / g1 as f64 } else { 0.0 },
                    if dims.m2 > 1 { std::f64::consts::TAU * k as f64 / g2 as f64 } else { 0.0 },
                ));
            }
        }
    }
    grid.dedup();
    let zero = VonMises::point(0.0);
    let beliefs: Vec<PathBelief> = grid.iter().map(|p| PathBelief::point(p.tau, p.theta, p.phi)).collect();
    let dict = expected_dictionary_rows(&beliefs, &zero, dims, &meas.pilots);
    let ys: Vec<CVector> = (0..meas.n_slots()).map(|t| meas.vectorized(t)).collect();
    let mut chosen: Vec<usize> = Vec::new();
    let mut resid = ys.clone();
    for _ in 0..count.min(grid.len()) {
        let mut best = (0usize, -1.0f64);
        for g in 0..grid.len() {
            if chosen.contains(&g) {
                continue;
            }
            let col = dict.column(g);
            let e: f64 = resid.iter().map(|r| col.dotc(r).norm_sqr()).sum();
            if e > best.1 {
                best = (g, e);
            }
        }
        chosen.push(best.0);
        let sub = dict.select_columns(chosen.iter());
        let gram = sub.adjoint() * &sub;
        let Ok(inv) = linalg::hermitian_inverse(&gram, "omp gram") else {
            chosen.pop();
            break;
        };
        for (r, y) in resid.iter_mut().zip(&ys) {
            let beta = &inv * (sub.adjoint() * y);
            *r = y - &sub * beta;
        }
    }
    chosen.into_iter().map(|g| grid[g]).collect()
}

fn total_residual(state: &Stage1State, meas: &MeasurementSet) -> f64 {
    let at = atoms(state, meas);
    residuals(state, meas, &at).iter().map(|r| r.norm_squared()).sum()
}

/// Runs the stage-I loop and emits the grid's table entry.
pub fn run_stage1(meas: &MeasurementSet, opts: &Stage1Options) -> Result<Stage1Output> {
    meas.validate()?;
    let t_slots = meas.n_slots();
    if t_slots == 0 {
        return Err(Error::Config(vec!["stage I needs at least one slot".into()]));
    }
    if let SyncMode::Known(v) = &opts.sync {
        if v.len() != t_slots {
            return Err(Error::Dimension(format!(
                "{} known synchronization errors for {t_slots} slots",
                v.len()
            )));
        }
    }
    let mut state = Stage1State::initial(meas);
    match &opts.sync {
        SyncMode::Known(v) => {
            for (s, &e) in state.sync.iter_mut().zip(v) {
                *s = VonMises::point(e);
            }
        }
        SyncMode::Zero | SyncMode::Estimate => {}
    }
    if opts.budget == 0 {
        return Ok(Stage1Output {
            entry: CkmEntry::empty(meas.grid_index),
            state,
        });
    }
    let mut generating = opts.init == InitMode::Generation;
    if opts.init == InitMode::Omp {
        let energy: f64 = meas.observations.iter().map(|y| y.norm_squared()).sum::<f64>() / t_slots as f64;
        let found = omp_paths(meas, opts.budget);
        let share = energy / found.len().max(1) as f64;
        for p in found {
            state.add_path(PathBelief::point(p.tau, p.theta, p.phi), share);
        }
        joint_sweep(&mut state, meas, opts)?;
        em_update(&mut state, meas);
    }
    let mut previous = f64::INFINITY;
    for iter in 0..opts.iterations() {
        state.iterations = iter + 1;
        let mut added = false;
        if generating && state.n_paths() < opts.budget {
            let at = atoms(&state, meas);
            let resid = residuals(&state, meas, &at);
            match generate_path(&state, meas, &resid, opts.search, opts.threshold_factor)? {
                Some(g) => {
                    state.add_path(g.belief, g.peak / t_slots as f64);
                    joint_sweep(&mut state, meas, opts)?;
                    added = true;
                }
                None => generating = false,
            }
        }
        if state.n_paths() == 0 {
            break;
        }
        refine_paths(&mut state, meas, opts.search)?;
        joint_sweep(&mut state, meas, opts)?;
        em_update(&mut state, meas);
        let energy = total_residual(&state, meas);
        let done_growing = !generating || state.n_paths() >= opts.budget;
        if !added && done_growing && previous.is_finite() && (previous - energy).abs() <= CONVERGENCE_TOL * previous {
            break;
        }
        previous = energy;
    }
    let entry = table_entry(&state, meas.grid_index, meas.dims);
    Ok(Stage1Output { entry, state })
}

/// Table entry from the state's mean parameters and powers, with the cached
/// full-band Gram inverse when it is well conditioned.
pub fn table_entry(state: &Stage1State, grid_id: usize, dims: ArrayDims) -> CkmEntry {
    let paths = state.path_means();
    let rows = paths
        .iter()
        .zip(&state.powers)
        .map(|(p, &rho)| CkmRow {
            tau: wrap_angle(p.tau),
            theta: wrap_angle(p.theta),
            phi: wrap_angle(p.phi),
            rho,
        })
        .collect::<Vec<_>>();
    let a = dictionary(&paths, 0.0, dims);
    let gram_inverse = if paths.is_empty() {
        None
    } else {
        linalg::hermitian_inverse(&(a.adjoint() * &a), "table Gram").ok()
    };
    CkmEntry {
        grid_id,
        l_s: rows.len(),
        rows,
        gram_inverse,
    }
}

/// Stage-I representation error in dB: each slot's shifted true static
/// channel `D(eps_t) H_s(t)` is fitted by least squares with the atoms
/// `a_N(tau_l + eps_hat_t) b_l`. A common delay offset between the paths and
/// the synchronization estimates cancels in this metric.
pub fn representation_nmse_db(
    paths: &[PathParams],
    sync_hat: &[f64],
    true_sync: &[f64],
    static_channels: &[CMatrix],
    dims: ArrayDims,
) -> Result<f64> {
    let mut err = 0.0;
    let mut total = 0.0;
    for t in 0..static_channels.len() {
        let h = &static_channels[t];
        let shifted = CMatrix::from_fn(h.nrows(), h.ncols(), |r, c| {
            h[(r, c)] * Complex64::from_polar(1.0, -(r as f64) * true_sync[t])
        });
        let y = vectorize(&shifted);
        total += y.norm_squared();
        if paths.is_empty() {
            err += y.norm_squared();
            continue;
        }
        let a = dictionary(paths, sync_hat[t], dims);
        let gram = a.adjoint() * &a;
        let rhs = a.adjoint() * &y;
        let beta = match linalg::hermitian_inverse(&gram, "representation fit") {
            Ok(inv) => inv * rhs,
            Err(_) => {
                let svd = a.clone().svd(true, true);
                svd.solve(&y, 1e-10).map_err(|e| Error::Dimension(e.to_string()))?
            }
        };
        err += (y - a * beta).norm_squared();
    }
    if total == 0.0 {
        return Err(Error::ZeroTruth);
    }
    if err == 0.0 {
        return Ok(crate::manifold::NMSE_FLOOR_DB);
    }
    Ok((10.0 * (err / total).log10()).max(crate::manifold::NMSE_FLOOR_DB))
}

/// Common delay offset `c` (circular mean of `eps_hat - eps`) relating the
/// estimated and true parametrizations: `tau_hat ~ tau + c`,
/// `eps_hat ~ eps - c`.
pub fn gauge_offset(sync_hat: &[f64], true_sync: &[f64]) -> f64 {
    let z: Complex64 = sync_hat
        .iter()
        .zip(true_sync)
        .map(|(h, e)| Complex64::from_polar(1.0, h - e))
        .sum();
    -z.arg()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{rank_one, PathParams};
    use crate::sim::Stage;

    fn synthetic(paths: &[(PathParams, Complex64)], eps: &[f64], dims: ArrayDims) -> MeasurementSet {
        let observations = eps
            .iter()
            .map(|&e| {
                let mut h = CMatrix::zeros(dims.n, dims.m());
                for (p, c) in paths {
                    h += rank_one(p, e, dims) * *c;
                }
                h
            })
            .collect();
        MeasurementSet {
            stage: Stage::I,
            dims,
            grid_index: 0,
            pilots: (0..dims.n).collect(),
            observations,
            poses: Vec::new(),
        }
    }

    #[test]
    fn single_path_excluded_residual_is_observation() {
        let dims = ArrayDims::new(16, 2, 2);
        let p = PathParams::new(0.7, 1.0, 2.0);
        let meas = synthetic(&[(p, Complex64::new(1.0, 0.5))], &[0.0], dims);
        let mut st = Stage1State::initial(&meas);
        st.add_path(PathBelief::point(p.tau, p.theta, p.phi), 1.0);
        st.coeffs[0].mean[0] = Complex64::new(1.0, 0.5);
        assert_eq!(residual_per_slot(&st, &meas, 0, Some(0)), meas.observations[0]);
        assert!(residual_per_slot(&st, &meas, 0, None).norm() < 1e-12);
    }

    #[test]
    fn generation_and_zero_residual() {
        let dims = ArrayDims::new(32, 2, 4);
        let p = PathParams::new(1.3, 0.9, 4.0);
        let meas = synthetic(&[(p, Complex64::new(0.8, -0.2))], &[0.0, 0.05], dims);
        let mut st = Stage1State::initial(&meas);
        st.sync[1] = VonMises::point(0.05);
        let g = generate_path(&st, &meas, &meas.observations, SearchConfig::default(), 3.0)
            .unwrap()
            .unwrap();
        assert!((g.belief.tau.mu - 1.3).abs() < 1e-6);
        assert!((g.belief.theta.mu - 0.9).abs() < 1e-6);
        assert!((g.belief.phi.mu - 4.0).abs() < 1e-6);
        let zeros = vec![CMatrix::zeros(32, 8); 2];
        assert!(generate_path(&st, &meas, &zeros, SearchConfig::default(), 3.0).unwrap().is_none());
    }

    #[test]
    fn zero_budget_gives_empty_entry() {
        let dims = ArrayDims::new(8, 1, 2);
        let meas = synthetic(&[(PathParams::new(0.1, 0.0, 0.3), Complex64::new(1.0, 0.0))], &[0.0], dims);
        let out = run_stage1(&meas, &Stage1Options::new(0)).unwrap();
        assert_eq!(out.entry.l_s, 0);
    }

    #[test]
    fn em_power_of_constant_coefficient() {
        let dims = ArrayDims::new(8, 1, 2);
        let p = PathParams::new(0.1, 0.0, 0.3);
        let c = Complex64::new(0.6, 0.8);
        let meas = synthetic(&[(p, c)], &[0.0, 0.0], dims);
        let mut st = Stage1State::initial(&meas);
        st.add_path(PathBelief::point(p.tau, p.theta, p.phi), 1.0);
        for s in &mut st.coeffs {
            s.mean[0] = c;
        }
        em_update(&mut st, &meas);
        assert!((st.powers[0] - 1.0).abs() < 1e-12);
        assert_eq!(st.noise_variance, NOISE_FLOOR);
    }
}
