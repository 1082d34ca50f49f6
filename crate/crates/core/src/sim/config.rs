use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::ArrayDims;

/// Parametric user antenna pattern. Each axis follows
/// `g(x) = a + (1 - a) cos^2(x / 2)`, so `g(0) = 1` and `g(pi) = a`; `a = 1`
/// is isotropic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationGain {
    pub front_back_ratio: f64,
    pub vertical_front_back_ratio: f64,
}

impl RotationGain {
    pub fn isotropic() -> Self {
        RotationGain {
            front_back_ratio: 1.0,
            vertical_front_back_ratio: 1.0,
        }
    }

    /// Power gain for a departure direction relative to the antenna boresight.
    pub fn power(&self, horizontal: f64, vertical: f64) -> f64 {
        axis_gain(self.front_back_ratio, horizontal) * axis_gain(self.vertical_front_back_ratio, vertical)
    }
}

fn axis_gain(a: f64, x: f64) -> f64 {
    let c = (0.5 * x).cos();
    a + (1.0 - a) * c * c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotLayout {
    /// Rows `floor(i N / P)`.
    Uniform,
    /// `P` distinct rows drawn from the measurement generator.
    Random,
}

/// Full generative description of a synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub carrier_frequency_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub n_subcarriers: usize,
    pub m1: usize,
    pub m2: usize,
    pub grid_size_m: f64,
    pub n_grids: usize,
    pub bs_distance_m: f64,
    pub n_static_clusters: usize,
    pub subpaths_per_cluster: usize,
    /// Intra-cluster rms angular spread.
    pub angular_spread_deg: f64,
    /// Mean of the exponential cluster excess-delay distribution.
    pub delay_spread_us: f64,
    pub intra_cluster_delay_spread_us: f64,
    /// Standard deviation of the spatially correlated cluster-delay field.
    pub field_delay_std_us: f64,
    /// Standard deviation of the spatially correlated cluster-angle field.
    pub field_angle_std_deg: f64,
    pub correlation_distance_m: f64,
    /// Share of static power carried by a zero-delay first cluster.
    pub los_power_fraction: f64,
    pub n_dynamic_scatterers: usize,
    pub dynamic_activity_prob: f64,
    pub dynamic_delay_range_us: [f64; 2],
    pub dynamic_subpaths: [usize; 2],
    pub dynamic_angular_spread_deg: f64,
    pub static_dynamic_power_ratio: f64,
    /// SNR of stage-II observations; absent means noiseless.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// SNR of stage-I observations; absent means noiseless.
    #[serde(default)]
    pub stage1_snr_db: Option<f64>,
    /// Whether stage-I observations contain dynamic paths.
    pub stage1_dynamics: bool,
    pub sync_error_range_us: [f64; 2],
    pub rotation_gain: RotationGain,
    pub trajectory_step_m: f64,
    pub pilot_layout: PilotLayout,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    /// Line-of-sight desk preset: 12 static paths in 4 clusters, one dynamic
    /// scatterer, `N = 64`, `2 x 4` array.
    pub fn los_desk() -> Self {
        ScenarioConfig {
            carrier_frequency_hz: 28e9,
            subcarrier_spacing_hz: 30e3,
            n_subcarriers: 64,
            m1: 2,
            m2: 4,
            grid_size_m: 1.0,
            n_grids: 4,
            bs_distance_m: 150.0,
            n_static_clusters: 4,
            subpaths_per_cluster: 3,
            angular_spread_deg: 4.0,
            delay_spread_us: 2.0,
            intra_cluster_delay_spread_us: 0.05,
            field_delay_std_us: 0.1,
            field_angle_std_deg: 3.0,
            correlation_distance_m: 40.0,
            los_power_fraction: 0.3,
            n_dynamic_scatterers: 1,
            dynamic_activity_prob: 0.5,
            dynamic_delay_range_us: [0.0, 1.0],
            dynamic_subpaths: [10, 20],
            dynamic_angular_spread_deg: 15.0,
            static_dynamic_power_ratio: 10.0,
            snr_db: Some(5.0),
            stage1_snr_db: Some(25.0),
            stage1_dynamics: false,
            sync_error_range_us: [0.0, 1.0],
            rotation_gain: RotationGain {
                front_back_ratio: 0.3,
                vertical_front_back_ratio: 0.7,
            },
            trajectory_step_m: 0.1,
            pilot_layout: PilotLayout::Uniform,
            rng_seed: 1,
        }
    }

    /// Non-line-of-sight desk preset: 24 static paths in 8 clusters.
    pub fn nlos_desk() -> Self {
        ScenarioConfig {
            carrier_frequency_hz: 6.5e9,
            n_static_clusters: 8,
            los_power_fraction: 0.0,
            correlation_distance_m: 50.0,
            ..ScenarioConfig::los_desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "los-desk" => Ok(ScenarioConfig::los_desk()),
            "nlos-desk" => Ok(ScenarioConfig::nlos_desk()),
            other => Err(Error::Config(vec![format!(
                "unknown preset `{other}` (expected los-desk or nlos-desk)"
            )])),
        }
    }

    pub fn dims(&self) -> ArrayDims {
        ArrayDims::new(self.n_subcarriers, self.m1, self.m2)
    }

    pub fn n_static_paths(&self) -> usize {
        self.n_static_clusters * self.subpaths_per_cluster
    }

    /// Normalized delay `2 pi df t` for a delay in microseconds.
    pub fn normalize_delay_us(&self, delay_us: f64) -> f64 {
        std::f64::consts::TAU * self.subcarrier_spacing_hz * delay_us * 1e-6
    }

    pub fn wavelength_m(&self) -> f64 {
        299_792_458.0 / self.carrier_frequency_hz
    }

    /// Checks every field and reports all offending ones at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v.is_finite() && v > 0.0) {
                bad.push(format!("{name} must be positive and finite (got {v})"));
            }
        };
        positive("carrier_frequency_hz", self.carrier_frequency_hz);
        positive("subcarrier_spacing_hz", self.subcarrier_spacing_hz);
        positive("grid_size_m", self.grid_size_m);
        positive("bs_distance_m", self.bs_distance_m);
        positive("delay_spread_us", self.delay_spread_us);
        positive("correlation_distance_m", self.correlation_distance_m);
        positive("static_dynamic_power_ratio", self.static_dynamic_power_ratio);
        let mut nonneg = |name: &str, v: f64| {
            if !(v.is_finite() && v >= 0.0) {
                bad.push(format!("{name} must be nonnegative and finite (got {v})"));
            }
        };
        nonneg("trajectory_step_m", self.trajectory_step_m);
        nonneg("angular_spread_deg", self.angular_spread_deg);
        nonneg("intra_cluster_delay_spread_us", self.intra_cluster_delay_spread_us);
        nonneg("field_delay_std_us", self.field_delay_std_us);
        nonneg("field_angle_std_deg", self.field_angle_std_deg);
        nonneg("dynamic_angular_spread_deg", self.dynamic_angular_spread_deg);
        for (name, v) in [
            ("n_subcarriers", self.n_subcarriers),
            ("m1", self.m1),
            ("m2", self.m2),
            ("n_grids", self.n_grids),
            ("n_static_clusters", self.n_static_clusters),
            ("subpaths_per_cluster", self.subpaths_per_cluster),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be at least 1"));
            }
        }
        for (name, p) in [
            ("dynamic_activity_prob", self.dynamic_activity_prob),
            ("los_power_fraction", self.los_power_fraction),
            ("rotation_gain.front_back_ratio", self.rotation_gain.front_back_ratio),
            (
                "rotation_gain.vertical_front_back_ratio",
                self.rotation_gain.vertical_front_back_ratio,
            ),
        ] {
            if !(0.0..=1.0).contains(&p) {
                bad.push(format!("{name} must lie in [0, 1] (got {p})"));
            }
        }
        if self.los_power_fraction >= 1.0 && self.n_static_clusters > 1 {
            bad.push("los_power_fraction must be below 1 when several clusters exist".into());
        }
        for (name, r) in [
            ("dynamic_delay_range_us", self.dynamic_delay_range_us),
            ("sync_error_range_us", self.sync_error_range_us),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= 0.0) {
                bad.push(format!("{name} must be an ordered nonnegative interval (got {r:?})"));
            }
        }
        let [lo, hi] = self.dynamic_subpaths;
        if lo == 0 || lo > hi {
            bad.push(format!("dynamic_subpaths must be an ordered interval of counts >= 1 (got {:?})", self.dynamic_subpaths));
        }
        for (name, s) in [("snr_db", self.snr_db), ("stage1_snr_db", self.stage1_snr_db)] {
            if let Some(v) = s {
                if v.is_nan() {
                    bad.push(format!("{name} must not be NaN"));
                }
            }
        }
        // cyclic prefix assumption: every excess delay below one symbol
        let max_delay_us = self.sync_error_range_us[1]
            + (self.dynamic_delay_range_us[1]).max(8.0 * self.delay_spread_us)
            + 4.0 * self.intra_cluster_delay_spread_us;
        if max_delay_us * 1e-6 * self.subcarrier_spacing_hz >= 1.0 {
            bad.push(format!(
                "delays up to {max_delay_us} us exceed the symbol duration 1/subcarrier_spacing"
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ScenarioConfig::los_desk().validate().unwrap();
        ScenarioConfig::nlos_desk().validate().unwrap();
        assert_eq!(ScenarioConfig::nlos_desk().n_static_paths(), 24);
        assert_eq!(ScenarioConfig::los_desk().n_static_paths(), 12);
    }

    #[test]
    fn validation_lists_every_offender() {
        let mut c = ScenarioConfig::los_desk();
        c.n_subcarriers = 0;
        c.dynamic_activity_prob = 1.5;
        c.sync_error_range_us = [1.0, 0.0];
        match c.validate() {
            Err(Error::Config(v)) => {
                assert_eq!(v.len(), 3, "{v:?}");
                assert!(v[0].contains("n_subcarriers"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pattern_front_back() {
        let g = RotationGain {
            front_back_ratio: 0.25,
            vertical_front_back_ratio: 1.0,
        };
        assert!((g.power(0.0, 0.3) - 1.0).abs() < 1e-15);
        assert!((g.power(std::f64::consts::PI, 0.3) - 0.25).abs() < 1e-15);
        let iso = RotationGain::isotropic();
        assert_eq!(iso.power(1.0, 2.0), 1.0);
    }

    #[test]
    fn toml_round_trip() {
        let c = ScenarioConfig::los_desk();
        let s = toml::to_string(&c).unwrap();
        let back: ScenarioConfig = toml::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
