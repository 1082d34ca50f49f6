//! Single-symbol dynamic channel estimation with a quasi-static prior.
//!
//! The table entry of the user's grid fixes the quasi-static paths; only
//! their coefficients and the synchronization error are re-estimated from
//! the pilot subcarriers. Dynamic paths are detected from the residual,
//! refined one at a time with Bernoulli-Gaussian coefficients, and the
//! activity and power hyperparameters follow EM updates.

use num_complex::Complex64;

use crate::beliefs::{bg_posterior, BernoulliGaussian, GaussianBelief, PathBelief, VonMises};
use crate::ckm::CkmEntry;
use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::{
    dictionary, dictionary_rows, expected_dictionary_rows, unvectorize, ArrayDims, PathParams,
};
use crate::sim::MeasurementSet;
use crate::spectral::{search_and_project, SearchConfig, SpectralObjective};
use crate::stage1::{generate_path, shift_projection, update_angle_beliefs, update_delay_belief, Stage1State, SyncMode};
use crate::{CMatrix, CVector};

const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Options {
    /// Maximum number of dynamic paths.
    pub budget: usize,
    pub max_iters: usize,
    pub sync: SyncMode,
    pub search: SearchConfig,
    pub threshold_factor: f64,
    /// Activity prior of freshly detected dynamic paths.
    pub initial_activity: f64,
    /// Relative change of the pilot residual energy that ends the loop.
    pub tolerance: f64,
    /// Keep the full-band reconstruction after every iteration.
    pub record_history: bool,
}

impl Stage2Options {
    pub fn new(budget: usize) -> Self {
        Stage2Options {
            budget,
            max_iters: 10,
            sync: SyncMode::Estimate,
            search: SearchConfig::default(),
            threshold_factor: 3.0,
            initial_activity: 0.5,
            tolerance: 1e-4,
            record_history: false,
        }
    }
}

/// Beliefs of one dynamic path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicEstimate {
    pub belief: PathBelief,
    pub prior: BernoulliGaussian,
    pub posterior: BernoulliGaussian,
}

impl DynamicEstimate {
    pub fn params(&self) -> PathParams {
        PathParams::new(self.belief.tau.mu, self.belief.theta.mu, self.belief.phi.mu)
    }

    fn strength(&self) -> f64 {
        self.posterior.estimate().norm_sqr()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2State {
    pub static_paths: Vec<PathParams>,
    pub static_coeffs: GaussianBelief,
    pub sync: VonMises,
    pub dynamic: Vec<DynamicEstimate>,
    pub noise_variance: f64,
    /// `(A(0)^H A(0))^{-1}` over the pilot rows; `None` without static paths.
    pub gram_inverse: Option<CMatrix>,
    /// Number of Gram inversions performed for this state.
    pub gram_inversions: usize,
    pub iterations: usize,
}

impl Stage2State {
    /// State for the static paths of `entry`. The pilot Gram inverse is
    /// taken from the entry's cache for full-band data and computed here
    /// otherwise.
    pub fn new(meas: &MeasurementSet, entry: &CkmEntry) -> Result<Self> {
        let dims = meas.dims;
        let static_paths = entry.paths();
        let l = static_paths.len();
        let mut gram_inversions = 0;
        let gram_inverse = if l == 0 {
            None
        } else {
            match &entry.gram_inverse {
                Some(g) if meas.is_full_band() && g.shape() == (l, l) => Some(g.clone()),
                _ => {
                    let a = dictionary_rows(&static_paths, 0.0, dims, &meas.pilots);
                    gram_inversions += 1;
                    Some(linalg::hermitian_inverse(
                        &(a.adjoint() * &a),
                        "pilot Gram of the static paths (use more pilots or fewer static paths)",
                    )?)
                }
            }
        };
        Ok(Stage2State {
            static_paths,
            static_coeffs: GaussianBelief::zeros(l),
            sync: VonMises::point(0.0),
            dynamic: Vec::new(),
            noise_variance: 1.0,
            gram_inverse,
            gram_inversions,
            iterations: 0,
        })
    }
}

/// Result of [`run_stage2`].
#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub state: Stage2State,
    /// Full-band `N x M` reconstruction.
    pub reconstruction: CMatrix,
    /// Reconstruction after each iteration when requested.
    pub history: Vec<CMatrix>,
    pub converged: bool,
}

/// Expected atom of a dynamic path over the pilot rows, vectorized.
fn dynamic_atom(belief: &PathBelief, dims: ArrayDims, pilots: &[usize]) -> CVector {
    expected_dictionary_rows(std::slice::from_ref(belief), &VonMises::point(0.0), dims, pilots)
        .column(0)
        .into_owned()
}

/// Vectorized pilot-row model of the static part and of every dynamic path
/// except `exclude`.
fn fitted(state: &Stage2State, meas: &MeasurementSet, with_static: bool, exclude: Option<usize>) -> CVector {
    let dims = meas.dims;
    let mut f = CVector::zeros(meas.pilots.len() * dims.m());
    if with_static && !state.static_paths.is_empty() {
        let a = dictionary_rows(&state.static_paths, state.sync.mu, dims, &meas.pilots);
        f += a * &state.static_coeffs.mean;
    }
    for (l, d) in state.dynamic.iter().enumerate() {
        let c = d.posterior.estimate();
        if Some(l) == exclude || c == Complex64::new(0.0, 0.0) {
            continue;
        }
        f += dynamic_atom(&d.belief, dims, &meas.pilots) * c;
    }
    f
}

fn observation(meas: &MeasurementSet) -> Result<CVector> {
    if meas.n_slots() != 1 {
        return Err(Error::Dimension(format!(
            "dynamic estimation works on one symbol (got {} slots)",
            meas.n_slots()
        )));
    }
    Ok(meas.vectorized(0))
}

/// Observation minus the current dynamic-path reconstruction.
pub fn static_residual(state: &Stage2State, meas: &MeasurementSet) -> Result<CVector> {
    Ok(observation(meas)? - fitted(state, meas, false, None))
}

/// Largest common stride of the pilot indices; the synchronization
/// objective is periodic in `2 pi / stride`.
pub fn pilot_stride(pilots: &[usize]) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let g = pilots.windows(2).fold(0, |g, w| gcd(g, w[1] - w[0]));
    g.max(1)
}

/// Representative of `eps` modulo `2 pi / stride` in `[-1/4, 3/4)` of the
/// period.
pub fn alias_window(eps: f64, stride: usize) -> f64 {
    let period = std::f64::consts::TAU / stride as f64;
    let mut e = eps.rem_euclid(period);
    if e >= 0.75 * period {
        e -= period;
    }
    e
}

/// `f(eps) = y^H A(eps) (A(0)^H A(0))^{-1} A(eps)^H y / noise_variance` as a
/// spectral objective over the pilot index differences.
pub fn static_sync_objective(state: &Stage2State, meas: &MeasurementSet, y_res: &CVector) -> Result<SpectralObjective> {
    let dims = meas.dims;
    let ginv = state
        .gram_inverse
        .as_ref()
        .ok_or_else(|| Error::Dimension("synchronization objective needs static paths".into()))?;
    let points: Vec<PathBelief> = state
        .static_paths
        .iter()
        .map(|p| PathBelief::point(p.tau, p.theta, p.phi))
        .collect();
    let y = unvectorize(y_res, meas.pilots.len(), dims.m());
    let b = shift_projection(&points, dims, &meas.pilots, &y);
    let m = b.adjoint() * ginv * &b;
    Ok(SpectralObjective::from_hermitian_form(
        &m.conjugate(),
        &meas.pilots,
        1.0 / state.noise_variance,
        dims.n,
    ))
}

/// Synchronization error and static coefficients from the static residual,
/// without priors on either.
pub fn calibrate_sync_and_static(
    state: &Stage2State,
    meas: &MeasurementSet,
    y_res: &CVector,
    sync: &SyncMode,
    cfg: SearchConfig,
) -> Result<(VonMises, GaussianBelief)> {
    let Some(ginv) = state.gram_inverse.as_ref() else {
        return Ok((VonMises::point(0.0), GaussianBelief::zeros(0)));
    };
    let eps = match sync {
        SyncMode::Zero => VonMises::point(0.0),
        SyncMode::Known(v) => VonMises::point(*v.first().ok_or_else(|| {
            Error::Dimension("known synchronization error missing".into())
        })?),
        SyncMode::Estimate => {
            let obj = static_sync_objective(state, meas, y_res)?;
            if obj.eta().iter().all(|z| z.norm() == 0.0) {
                state.sync
            } else {
                let b = search_and_project(&obj, cfg)?;
                VonMises::new(alias_window(b.mu, pilot_stride(&meas.pilots)), b.kappa)
            }
        }
    };
    let a = dictionary_rows(&state.static_paths, eps.mu, meas.dims, &meas.pilots);
    let mean = ginv * (a.adjoint() * y_res);
    let covariance = ginv * Complex64::from(state.noise_variance);
    Ok((eps, GaussianBelief { mean, covariance }))
}

/// Single-path stage-I view of a pilot residual with the synchronization
/// error fixed at zero.
fn single_path_view(
    meas: &MeasurementSet,
    resid: CMatrix,
    noise_variance: f64,
) -> (Stage1State, MeasurementSet) {
    let view = MeasurementSet {
        stage: meas.stage,
        dims: meas.dims,
        grid_index: meas.grid_index,
        pilots: meas.pilots.clone(),
        observations: vec![resid],
        poses: Vec::new(),
    };
    let mut state = Stage1State::initial(&view);
    state.noise_variance = noise_variance;
    (state, view)
}

fn likelihood_message(atom: &CVector, resid: &CVector, noise_variance: f64) -> (Complex64, f64) {
    let energy = atom.norm_squared();
    (atom.dotc(resid) / energy, noise_variance / energy)
}

/// Sequentially detects up to `opts.budget` dynamic paths in the residual
/// left by the static part, with the synchronization error absorbed into the
/// dynamic delays.
pub fn init_dynamic_paths(
    state: &Stage2State,
    meas: &MeasurementSet,
    opts: &Stage2Options,
) -> Result<Vec<DynamicEstimate>> {
    let dims = meas.dims;
    let p = meas.pilots.len();
    let mut r = observation(meas)? - fitted(state, meas, true, None);
    let mut found = Vec::new();
    for _ in 0..opts.budget {
        let s2 = (r.norm_squared() / (p * dims.m()) as f64).max(NOISE_FLOOR);
        let rm = unvectorize(&r, p, dims.m());
        let (view_state, view) = single_path_view(meas, rm.clone(), s2);
        let Some(g) = generate_path(&view_state, &view, &[rm], opts.search, opts.threshold_factor)? else {
            break;
        };
        let atom = dynamic_atom(&g.belief, dims, &meas.pilots);
        let (mu_g, v_g) = likelihood_message(&atom, &r, s2);
        let prior = BernoulliGaussian {
            lambda: opts.initial_activity,
            mean: Complex64::new(0.0, 0.0),
            variance: mu_g.norm_sqr().max(NOISE_FLOOR),
        };
        let posterior = bg_posterior(prior, mu_g, v_g);
        r -= &atom * posterior.estimate();
        found.push(DynamicEstimate {
            belief: g.belief,
            prior,
            posterior,
        });
    }
    Ok(found)
}

/// Refines the triple of dynamic path `l` against the residual of every
/// other component, then fuses its coefficient through the
/// Bernoulli-Gaussian prior.
pub fn update_dynamic_path(
    state: &Stage2State,
    meas: &MeasurementSet,
    l: usize,
    cfg: SearchConfig,
) -> Result<DynamicEstimate> {
    let dims = meas.dims;
    let current = state.dynamic[l];
    let r = observation(meas)? - fitted(state, meas, true, Some(l));
    let mut belief = current.belief;
    let beta = current.posterior.mean;
    if beta != Complex64::new(0.0, 0.0) {
        let rm = unvectorize(&r, meas.pilots.len(), dims.m());
        let (mut view_state, view) = single_path_view(meas, rm.clone(), state.noise_variance);
        view_state.paths.push(belief);
        view_state.delay_priors.push(VonMises::uniform());
        view_state.powers.push(current.prior.variance);
        view_state.coeffs[0] = GaussianBelief {
            mean: CVector::from_element(1, beta),
            covariance: CMatrix::zeros(1, 1),
        };
        let excluded = [rm];
        belief.tau = update_delay_belief(&view_state, &view, 0, &excluded, cfg)?;
        view_state.paths[0].tau = belief.tau;
        let (theta, phi) = update_angle_beliefs(&view_state, &view, 0, &excluded, cfg)?;
        belief.theta = theta;
        belief.phi = phi;
    }
    let atom = dynamic_atom(&belief, dims, &meas.pilots);
    let (mu_g, v_g) = likelihood_message(&atom, &r, state.noise_variance);
    Ok(DynamicEstimate {
        belief,
        prior: current.prior,
        posterior: bg_posterior(current.prior, mu_g, v_g),
    })
}

/// Promotes posteriors to priors and re-estimates the noise variance from
/// the pilot residual.
pub fn em_update_dynamic(state: &mut Stage2State, meas: &MeasurementSet) -> Result<()> {
    for d in &mut state.dynamic {
        d.prior.lambda = d.posterior.lambda;
        d.prior.variance = (d.posterior.mean.norm_sqr() + d.posterior.variance).max(NOISE_FLOOR);
    }
    let energy = residual_energy(state, meas)?;
    let dim = (meas.pilots.len() * meas.dims.m()) as f64;
    state.noise_variance = (energy / dim).max(NOISE_FLOOR);
    Ok(())
}

/// Pilot-row residual energy of the full model.
pub fn residual_energy(state: &Stage2State, meas: &MeasurementSet) -> Result<f64> {
    Ok((observation(meas)? - fitted(state, meas, true, None)).norm_squared())
}

/// Full-band channel implied by the state.
pub fn reconstruct_state(state: &Stage2State, dims: ArrayDims) -> CMatrix {
    let mut h = CMatrix::zeros(dims.n, dims.m());
    if !state.static_paths.is_empty() {
        let a = dictionary(&state.static_paths, state.sync.mu, dims);
        h += unvectorize(&(a * &state.static_coeffs.mean), dims.n, dims.m());
    }
    let dynamic: Vec<PathParams> = state.dynamic.iter().map(DynamicEstimate::params).collect();
    if !dynamic.is_empty() {
        let a = dictionary(&dynamic, 0.0, dims);
        let c = CVector::from_iterator(dynamic.len(), state.dynamic.iter().map(|d| d.posterior.estimate()));
        h += unvectorize(&(a * c), dims.n, dims.m());
    }
    h
}

fn calibrate_into(state: &mut Stage2State, meas: &MeasurementSet, opts: &Stage2Options) -> Result<()> {
    let y_res = static_residual(state, meas)?;
    let (eps, coeffs) = calibrate_sync_and_static(state, meas, &y_res, &opts.sync, opts.search)?;
    state.sync = eps;
    state.static_coeffs = coeffs;
    Ok(())
}

/// Runs the dynamic estimator on one pilot symbol with the grid's table
/// entry as the quasi-static prior.
pub fn run_stage2(meas: &MeasurementSet, entry: &CkmEntry, opts: &Stage2Options) -> Result<Stage2Output> {
    meas.validate()?;
    let y = observation(meas)?;
    if let SyncMode::Known(v) = &opts.sync {
        if v.len() != 1 {
            return Err(Error::Dimension(format!(
                "{} known synchronization errors for one symbol",
                v.len()
            )));
        }
    }
    let dims = meas.dims;
    let dim = (meas.pilots.len() * dims.m()) as f64;
    let mut state = Stage2State::new(meas, entry)?;
    state.noise_variance = (y.norm_squared() / dim).max(NOISE_FLOOR);
    calibrate_into(&mut state, meas, opts)?;
    state.noise_variance = (residual_energy(&state, meas)? / dim).max(NOISE_FLOOR);
    state.dynamic = init_dynamic_paths(&state, meas, opts)?;

    let mut history = Vec::new();
    let mut previous = f64::INFINITY;
    let mut converged = false;
    for iter in 0..opts.max_iters {
        state.iterations = iter + 1;
        calibrate_into(&mut state, meas, opts)?;
        let mut order: Vec<usize> = (0..state.dynamic.len()).collect();
        order.sort_by(|&a, &b| {
            state.dynamic[b]
                .strength()
                .total_cmp(&state.dynamic[a].strength())
                .then(a.cmp(&b))
        });
        for l in order {
            state.dynamic[l] = update_dynamic_path(&state, meas, l, opts.search)?;
        }
        em_update_dynamic(&mut state, meas)?;
        if opts.record_history {
            history.push(reconstruct_state(&state, dims));
        }
        let energy = residual_energy(&state, meas)?;
        if previous.is_finite() && (previous - energy).abs() <= opts.tolerance * previous {
            converged = true;
            break;
        }
        previous = energy;
    }
    let reconstruction = reconstruct_state(&state, dims);
    Ok(Stage2Output {
        state,
        reconstruction,
        history,
        converged,
    })
}
