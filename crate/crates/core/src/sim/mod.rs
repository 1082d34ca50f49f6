//! Synthetic dynamic MIMO-OFDM scenarios: spatially consistent quasi-static
//! clusters, user-rotation gain variation, transient dynamic scatterers,
//! per-measurement synchronization error and pilot-subsampled observations.

pub mod config;
pub mod dataset;
pub mod geometry;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use config::{PilotLayout, RotationGain, ScenarioConfig};
pub use geometry::{
    generate_static_geometry, path_gain, ray_params, ClusterDescriptor, StaticGeometry,
    SubpathDescriptor, UserPose,
};

use crate::error::{Error, Result};
use crate::manifold::{reconstruct, vectorize, ArrayDims, PathParams};
use crate::seeds::rng_for;
use crate::{CMatrix, CVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "stage1")]
    I,
    #[serde(rename = "stage2")]
    II,
}

impl Stage {
    fn tag(self) -> &'static str {
        match self {
            Stage::I => "stage1",
            Stage::II => "stage2",
        }
    }
}

/// What to synthesize from a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRequest {
    pub stage: Stage,
    pub n_slots: usize,
    pub pilot_fraction: f64,
    pub grid_index: usize,
    /// Seed of the measurement-side randomness (trajectory, synchronization,
    /// dynamics, noise); the environment itself follows the scenario seed.
    pub seed: u64,
}

impl SynthesisRequest {
    pub fn stage1(n_slots: usize, grid_index: usize, seed: u64) -> Self {
        SynthesisRequest {
            stage: Stage::I,
            n_slots,
            pilot_fraction: 1.0,
            grid_index,
            seed,
        }
    }

    pub fn stage2(pilot_fraction: f64, grid_index: usize, seed: u64) -> Self {
        SynthesisRequest {
            stage: Stage::II,
            n_slots: 1,
            pilot_fraction,
            grid_index,
            seed,
        }
    }
}

/// Per-slot pilot observations.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub stage: Stage,
    pub dims: ArrayDims,
    pub grid_index: usize,
    /// Selected subcarriers, strictly increasing.
    pub pilots: Vec<usize>,
    /// `P x M` matrices, one per slot.
    pub observations: Vec<CMatrix>,
    pub poses: Vec<UserPose>,
}

impl MeasurementSet {
    pub fn n_slots(&self) -> usize {
        self.observations.len()
    }

    pub fn is_full_band(&self) -> bool {
        self.pilots.len() == self.dims.n
    }

    /// Observation of slot `t` flattened with the antenna index fastest.
    pub fn vectorized(&self, t: usize) -> CVector {
        vectorize(&self.observations[t])
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.pilots.windows(2).any(|w| w[0] >= w[1]) {
            bad.push("pilot indices must be strictly increasing".to_string());
        }
        if self.pilots.iter().any(|&p| p >= self.dims.n) {
            bad.push("pilot index out of range".to_string());
        }
        for (t, y) in self.observations.iter().enumerate() {
            if y.shape() != (self.pilots.len(), self.dims.m()) {
                bad.push(format!("slot {t}: observation shape {:?}", y.shape()));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// A dynamic ray; inactive scatterers are recorded with zero gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicPath {
    pub scatterer: usize,
    /// Delay includes the slot's synchronization error.
    pub params: PathParams,
    pub coeff: Complex64,
    pub active: bool,
}

/// Everything the simulator knows about the generated slots.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `[slot][ray]` static ray parameters at the slot's pose.
    pub static_paths: Vec<Vec<PathParams>>,
    pub static_coeffs: Vec<Vec<Complex64>>,
    pub dynamic_paths: Vec<Vec<DynamicPath>>,
    /// Normalized synchronization error per slot.
    pub sync_error: Vec<f64>,
    pub noise_variance: f64,
    /// Quasi-static channel without synchronization shift, `N x M`.
    pub static_channels: Vec<CMatrix>,
    /// Total baseband channel including the shift and the dynamic part.
    pub channels: Vec<CMatrix>,
}

impl GroundTruth {
    /// Largest Frobenius mismatch between stored channels and the model sum
    /// of their stored components.
    pub fn model_mismatch(&self, dims: ArrayDims) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for t in 0..self.channels.len() {
            let (dp, dc): (Vec<PathParams>, Vec<Complex64>) = self.dynamic_paths[t]
                .iter()
                .map(|d| (d.params, d.coeff))
                .unzip();
            let h = reconstruct(
                &self.static_paths[t],
                &self.static_coeffs[t],
                self.sync_error[t],
                &dp,
                &dc,
                dims,
            )?;
            worst = worst.max((h - &self.channels[t]).norm());
            let hs = reconstruct(&self.static_paths[t], &self.static_coeffs[t], 0.0, &[], &[], dims)?;
            worst = worst.max((hs - &self.static_channels[t]).norm());
        }
        Ok(worst)
    }

    /// Dynamic part of slot `t`.
    pub fn dynamic_channel(&self, t: usize, dims: ArrayDims) -> Result<CMatrix> {
        let (dp, dc): (Vec<PathParams>, Vec<Complex64>) = self.dynamic_paths[t]
            .iter()
            .map(|d| (d.params, d.coeff))
            .unzip();
        reconstruct(&[], &[], 0.0, &dp, &dc, dims)
    }
}

/// Selected subcarriers for a pilot fraction.
pub fn pilot_mask(n: usize, fraction: f64, layout: PilotLayout, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(vec![format!(
            "pilot_fraction must lie in (0, 1] (got {fraction})"
        )]));
    }
    let p = ((fraction * n as f64).round() as usize).clamp(1, n);
    Ok(match layout {
        PilotLayout::Uniform => (0..p).map(|i| i * n / p).collect(),
        PilotLayout::Random => {
            let mut v = sample(rng, n, p).into_vec();
            v.sort_unstable();
            v
        }
    })
}

fn complex_normal(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

fn draw_dynamic(
    cfg: &ScenarioConfig,
    static_energy: f64,
    eps: f64,
    rng: &mut impl Rng,
) -> Vec<DynamicPath> {
    let n_dyn = cfg.n_dynamic_scatterers;
    let p = cfg.dynamic_activity_prob;
    if n_dyn == 0 || p == 0.0 {
        return Vec::new();
    }
    let cluster_power = static_energy / (cfg.static_dynamic_power_ratio * n_dyn as f64 * p);
    let spread = cfg.dynamic_angular_spread_deg.to_radians();
    let mut out = Vec::new();
    for s in 0..n_dyn {
        let active = rng.random_bool(p);
        let [dlo, dhi] = cfg.dynamic_delay_range_us;
        let delay = if dhi > dlo { rng.random_range(dlo..dhi) } else { dlo };
        let az = rng.random_range(-60f64..60.0).to_radians();
        let el = rng.random_range(-20f64..20.0).to_radians();
        if !active {
            out.push(DynamicPath {
                scatterer: s,
                params: PathParams::new(
                    cfg.normalize_delay_us(delay) + eps,
                    std::f64::consts::PI * az.sin() * el.cos(),
                    std::f64::consts::PI * el.sin(),
                ),
                coeff: Complex64::new(0.0, 0.0),
                active: false,
            });
            continue;
        }
        let [klo, khi] = cfg.dynamic_subpaths;
        let k = rng.random_range(klo..=khi);
        for _ in 0..k {
            let a = az + rng.sample::<f64, _>(StandardNormal) * spread;
            let e = el + rng.sample::<f64, _>(StandardNormal) * spread * 0.5;
            let d = delay + rng.sample::<f64, _>(StandardNormal).abs() * cfg.intra_cluster_delay_spread_us;
            out.push(DynamicPath {
                scatterer: s,
                params: PathParams::new(
                    cfg.normalize_delay_us(d) + eps,
                    std::f64::consts::PI * a.sin() * e.cos(),
                    std::f64::consts::PI * e.sin(),
                ),
                coeff: complex_normal(rng, cluster_power / k as f64),
                active: true,
            });
        }
    }
    out
}

/// Generates observations and ground truth for one grid.
pub fn synthesize_measurements(
    cfg: &ScenarioConfig,
    req: &SynthesisRequest,
) -> Result<(MeasurementSet, GroundTruth)> {
    cfg.validate()?;
    let mut bad = Vec::new();
    if req.n_slots == 0 {
        bad.push("n_slots must be at least 1".to_string());
    }
    if req.stage == Stage::II && req.n_slots != 1 {
        bad.push(format!("stage-II data has exactly one slot (got {})", req.n_slots));
    }
    if req.grid_index >= cfg.n_grids {
        bad.push(format!("grid_index {} outside 0..{}", req.grid_index, cfg.n_grids));
    }
    if !(req.pilot_fraction > 0.0 && req.pilot_fraction <= 1.0) {
        bad.push(format!("pilot_fraction must lie in (0, 1] (got {})", req.pilot_fraction));
    }
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }
    let dims = cfg.dims();
    let geo = StaticGeometry::generate(cfg);
    let grid = req.grid_index.to_string();
    let labels = |what: &'static str| [req.stage.tag(), grid.as_str(), what];
    let mut pose_rng = rng_for(req.seed, &labels("poses"));
    let mut sync_rng = rng_for(req.seed, &labels("sync"));
    let mut dyn_rng = rng_for(req.seed, &labels("dynamic"));
    let mut noise_rng = rng_for(req.seed, &labels("noise"));
    let mut pilot_rng = rng_for(req.seed, &labels("pilots"));

    let poses = geometry::random_walk(cfg, req.grid_index, req.n_slots, &mut pose_rng);
    let [slo, shi] = cfg.sync_error_range_us;
    let mut static_paths = Vec::with_capacity(req.n_slots);
    let mut static_coeffs = Vec::with_capacity(req.n_slots);
    let mut static_channels = Vec::with_capacity(req.n_slots);
    let mut sync_error = Vec::with_capacity(req.n_slots);
    for pose in &poses {
        let clusters = geo.clusters_at(pose.position[0]);
        let mut paths = Vec::new();
        let mut coeffs = Vec::new();
        for c in &clusters {
            for r in &c.subpaths {
                paths.push(ray_params(cfg, c, r));
                coeffs.push(path_gain(c, r, pose, cfg));
            }
        }
        static_channels.push(reconstruct(&paths, &coeffs, 0.0, &[], &[], dims)?);
        static_paths.push(paths);
        static_coeffs.push(coeffs);
        let us = if shi > slo { sync_rng.random_range(slo..shi) } else { slo };
        sync_error.push(cfg.normalize_delay_us(us));
    }

    let with_dynamics = req.stage == Stage::II || cfg.stage1_dynamics;
    let mut dynamic_paths = Vec::with_capacity(req.n_slots);
    let mut channels = Vec::with_capacity(req.n_slots);
    for t in 0..req.n_slots {
        let dynamic = if with_dynamics {
            draw_dynamic(cfg, static_channels[t].norm_squared(), sync_error[t], &mut dyn_rng)
        } else {
            Vec::new()
        };
        let (dp, dc): (Vec<PathParams>, Vec<Complex64>) =
            dynamic.iter().map(|d| (d.params, d.coeff)).unzip();
        channels.push(reconstruct(
            &static_paths[t],
            &static_coeffs[t],
            sync_error[t],
            &dp,
            &dc,
            dims,
        )?);
        dynamic_paths.push(dynamic);
    }

    let snr_db = match req.stage {
        Stage::I => cfg.stage1_snr_db,
        Stage::II => cfg.snr_db,
    };
    let mean_entry_energy = static_channels.iter().map(|h| h.norm_squared()).sum::<f64>()
        / (req.n_slots * dims.n * dims.m()) as f64;
    let noise_variance = match snr_db {
        Some(s) if s.is_finite() => mean_entry_energy / 10f64.powf(s / 10.0),
        _ => 0.0,
    };

    let pilots = pilot_mask(dims.n, req.pilot_fraction, cfg.pilot_layout, &mut pilot_rng)?;
    let observations = channels
        .iter()
        .map(|h| {
            // noise is drawn for every subcarrier so that pilot subsets of
            // the same seed see identical noise on shared rows
            let full = CMatrix::from_fn(dims.n, dims.m(), |r, c| {
                h[(r, c)] + complex_normal(&mut noise_rng, noise_variance)
            });
            full.select_rows(pilots.iter())
        })
        .collect();

    let measurements = MeasurementSet {
        stage: req.stage,
        dims,
        grid_index: req.grid_index,
        pilots,
        observations,
        poses,
    };
    let truth = GroundTruth {
        static_paths,
        static_coeffs,
        dynamic_paths,
        sync_error,
        noise_variance,
        static_channels,
        channels,
    };
    Ok((measurements, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_static_observation_is_the_static_channel() {
        let mut c = ScenarioConfig::los_desk();
        c.stage1_snr_db = None;
        c.sync_error_range_us = [0.0, 0.0];
        let (m, t) = synthesize_measurements(&c, &SynthesisRequest::stage1(3, 0, 5)).unwrap();
        for s in 0..3 {
            assert_eq!(m.observations[s], t.static_channels[s]);
            assert!(t.dynamic_paths[s].is_empty());
        }
        assert_eq!(t.noise_variance, 0.0);
    }

    #[test]
    fn half_pilots_use_uniform_stride() {
        let c = ScenarioConfig::los_desk();
        let (m, _) = synthesize_measurements(&c, &SynthesisRequest::stage2(0.5, 0, 5)).unwrap();
        assert_eq!(m.pilots.len(), 32);
        assert!(m.pilots.iter().enumerate().all(|(i, &p)| p == 2 * i));
        assert_eq!(m.observations[0].nrows(), 32);
        m.validate().unwrap();
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let c = ScenarioConfig::los_desk();
        let mut r = SynthesisRequest::stage2(0.0, 0, 1);
        assert!(synthesize_measurements(&c, &r).is_err());
        r.pilot_fraction = 1.0;
        r.n_slots = 2;
        assert!(synthesize_measurements(&c, &r).is_err());
    }

    #[test]
    fn stored_channels_match_model() {
        let c = ScenarioConfig::los_desk();
        let (_, t) = synthesize_measurements(&c, &SynthesisRequest::stage2(1.0, 1, 9)).unwrap();
        assert!(t.model_mismatch(c.dims()).unwrap() < 1e-10);
    }
}
