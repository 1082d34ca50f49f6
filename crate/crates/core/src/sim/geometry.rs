use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::manifold::PathParams;
use crate::seeds::rng_for;

/// Position and antenna rotation of the user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserPose {
    pub position: [f64; 3],
    pub rotation_h: f64,
    pub rotation_v: f64,
}

/// One ray inside a cluster; offsets are relative to the cluster mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubpathDescriptor {
    pub delay_offset_us: f64,
    pub azimuth_offset: f64,
    pub elevation_offset: f64,
    pub power: f64,
    /// Departure direction at the user, in the world frame.
    pub departure_azimuth: f64,
    pub departure_elevation: f64,
    /// Scalar stand-in for the polarization coupling.
    pub polarization: Complex64,
}

/// Cluster means (arrival side) and its rays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDescriptor {
    pub delay_us: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub subpaths: Vec<SubpathDescriptor>,
}

/// Environment-wide static geometry: per-cluster base parameters, rays and
/// the spatially correlated fields sampled at every grid center.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticGeometry {
    base: Vec<ClusterDescriptor>,
    /// `[grid][cluster] -> (delay_us, azimuth, elevation)` perturbations.
    field: Vec<Vec<[f64; 3]>>,
    grid_size_m: f64,
}

impl StaticGeometry {
    pub fn generate(cfg: &ScenarioConfig) -> Self {
        let mut rng = rng_for(cfg.rng_seed, &["static-geometry"]);
        let n_c = cfg.n_static_clusters;
        let los = cfg.los_power_fraction > 0.0;
        let exp = Exp::new(1.0 / cfg.delay_spread_us).expect("positive delay spread");
        let mut delays: Vec<f64> = (0..n_c).map(|_| exp.sample(&mut rng)).collect();
        delays.sort_by(f64::total_cmp);
        if los {
            let first = delays[0];
            for d in &mut delays {
                *d -= first;
            }
        }
        let mut powers: Vec<f64> = delays
            .iter()
            .map(|d| {
                let shadow: f64 = rng.sample::<f64, _>(StandardNormal) * 3.0;
                (-d / cfg.delay_spread_us).exp() * 10f64.powf(-shadow / 10.0)
            })
            .collect();
        if los {
            let rest: f64 = powers[1..].iter().sum();
            powers[0] = cfg.los_power_fraction;
            for p in &mut powers[1..] {
                *p *= (1.0 - cfg.los_power_fraction) / rest.max(f64::MIN_POSITIVE);
            }
            if n_c == 1 {
                powers[0] = 1.0;
            }
        } else {
            let total: f64 = powers.iter().sum();
            for p in &mut powers {
                *p /= total;
            }
        }
        let spread = cfg.angular_spread_deg.to_radians();
        let k = cfg.subpaths_per_cluster;
        let base = (0..n_c)
            .map(|c| {
                let azimuth = rng.random_range(-60f64..60.0).to_radians();
                let elevation = rng.random_range(-20f64..20.0).to_radians();
                let dep_az = rng.random_range(0.0..std::f64::consts::TAU);
                let dep_el = rng.random_range(-15f64..15.0).to_radians();
                let single = los && c == 0;
                let subpaths = (0..k)
                    .map(|s| {
                        let (dt, da, de) = if single && s == 0 {
                            (0.0, 0.0, 0.0)
                        } else {
                            (
                                rng.sample::<f64, _>(StandardNormal).abs()
                                    * cfg.intra_cluster_delay_spread_us,
                                rng.sample::<f64, _>(StandardNormal) * spread,
                                rng.sample::<f64, _>(StandardNormal) * spread * 0.5,
                            )
                        };
                        SubpathDescriptor {
                            delay_offset_us: dt,
                            azimuth_offset: da,
                            elevation_offset: de,
                            power: if single && k > 1 {
                                if s == 0 {
                                    0.8 * powers[c]
                                } else {
                                    0.2 * powers[c] / (k - 1) as f64
                                }
                            } else {
                                powers[c] / k as f64
                            },
                            departure_azimuth: dep_az + rng.sample::<f64, _>(StandardNormal) * spread,
                            departure_elevation: dep_el,
                            polarization: Complex64::from_polar(
                                1.0,
                                rng.random_range(0.0..std::f64::consts::TAU),
                            ),
                        }
                    })
                    .collect();
                ClusterDescriptor {
                    delay_us: delays[c],
                    azimuth,
                    elevation,
                    subpaths,
                }
            })
            .collect();
        let field = correlated_field(cfg, &mut rng);
        StaticGeometry {
            base,
            field,
            grid_size_m: cfg.grid_size_m,
        }
    }

    /// Cluster means linearly interpolated between grid centers along `x`.
    pub fn clusters_at(&self, x: f64) -> Vec<ClusterDescriptor> {
        let n = self.field.len();
        let u = (x / self.grid_size_m - 0.5).clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n.saturating_sub(2));
        let w = if n == 1 { 0.0 } else { u - i as f64 };
        let j = (i + 1).min(n - 1);
        self.base
            .iter()
            .enumerate()
            .map(|(c, b)| {
                let f = |k: usize| (1.0 - w) * self.field[i][c][k] + w * self.field[j][c][k];
                ClusterDescriptor {
                    delay_us: (b.delay_us + f(0)).max(0.0),
                    azimuth: b.azimuth + f(1),
                    elevation: b.elevation + f(2),
                    subpaths: b.subpaths.clone(),
                }
            })
            .collect()
    }

    pub fn grid_center(&self, grid_index: usize) -> f64 {
        (grid_index as f64 + 0.5) * self.grid_size_m
    }
}

/// Exponentially correlated Gaussian field over grid centers on a line,
/// sampled as a stationary first-order autoregression.
fn correlated_field(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Vec<Vec<[f64; 3]>> {
    let rho = (-cfg.grid_size_m / cfg.correlation_distance_m).exp();
    let innov = (1.0 - rho * rho).max(0.0).sqrt();
    let stds = [
        cfg.field_delay_std_us,
        cfg.field_angle_std_deg.to_radians(),
        cfg.field_angle_std_deg.to_radians() * 0.5,
    ];
    let mut out: Vec<Vec<[f64; 3]>> = Vec::with_capacity(cfg.n_grids);
    for g in 0..cfg.n_grids {
        let row = (0..cfg.n_static_clusters)
            .map(|c| {
                let mut v = [0.0; 3];
                for k in 0..3 {
                    let z: f64 = rng.sample(StandardNormal);
                    v[k] = if g == 0 {
                        stds[k] * z
                    } else {
                        rho * out[g - 1][c][k] + innov * stds[k] * z
                    };
                }
                v
            })
            .collect();
        out.push(row);
    }
    out
}

/// Cluster descriptors evaluated at the center of `grid_index`.
pub fn generate_static_geometry(cfg: &ScenarioConfig, grid_index: usize) -> Vec<ClusterDescriptor> {
    let geo = StaticGeometry::generate(cfg);
    geo.clusters_at(geo.grid_center(grid_index))
}

/// Normalized path parameters of a ray seen from `pose`.
pub fn ray_params(cfg: &ScenarioConfig, cluster: &ClusterDescriptor, ray: &SubpathDescriptor) -> PathParams {
    let az = cluster.azimuth + ray.azimuth_offset;
    let el = cluster.elevation + ray.elevation_offset;
    PathParams::new(
        cfg.normalize_delay_us(cluster.delay_us + ray.delay_offset_us),
        std::f64::consts::PI * az.sin() * el.cos(),
        std::f64::consts::PI * el.sin(),
    )
}

/// Complex gain of a ray: power, user antenna pattern at the rotated
/// departure direction, polarization and propagation phase.
pub fn path_gain(
    cluster: &ClusterDescriptor,
    ray: &SubpathDescriptor,
    pose: &UserPose,
    cfg: &ScenarioConfig,
) -> Complex64 {
    let pattern = cfg.rotation_gain.power(
        ray.departure_azimuth - pose.rotation_h,
        ray.departure_elevation - pose.rotation_v,
    );
    let (sa, ca) = ray.departure_azimuth.sin_cos();
    let (se, ce) = ray.departure_elevation.sin_cos();
    let p = pose.position;
    let projection = p[0] * ce * ca + p[1] * ce * sa + p[2] * se;
    let excess = 299_792_458.0 * (cluster.delay_us + ray.delay_offset_us) * 1e-6;
    let distance = cfg.bs_distance_m + excess - projection;
    let phase = -std::f64::consts::TAU * (distance / cfg.wavelength_m()).fract();
    ray.polarization * Complex64::from_polar((ray.power * pattern).sqrt(), phase)
}

/// Random-walk trajectory inside a grid cell with the antenna aligned to the
/// direction of motion.
pub fn random_walk(cfg: &ScenarioConfig, grid_index: usize, steps: usize, rng: &mut impl Rng) -> Vec<UserPose> {
    let g = cfg.grid_size_m;
    let x0 = grid_index as f64 * g;
    let mut x = x0 + rng.random_range(0.0..g);
    let mut y = rng.random_range(0.0..g);
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let turn = Normal::new(0.0, 0.5).expect("finite");
    let tilt = Normal::new(0.0, 0.1).expect("finite");
    let mut out = Vec::with_capacity(steps);
    for s in 0..steps {
        if s > 0 {
            heading += turn.sample(rng);
            x += cfg.trajectory_step_m * heading.cos();
            y += cfg.trajectory_step_m * heading.sin();
            // reflect at the cell walls
            if x < x0 || x > x0 + g {
                x = x.clamp(x0, x0 + g);
                heading = std::f64::consts::PI - heading;
            }
            if !(0.0..=g).contains(&y) {
                y = y.clamp(0.0, g);
                heading = -heading;
            }
        }
        out.push(UserPose {
            position: [x, y, 0.0],
            rotation_h: heading.rem_euclid(std::f64::consts::TAU),
            rotation_v: tilt.sample(rng),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_is_deterministic() {
        let c = ScenarioConfig::los_desk();
        assert_eq!(generate_static_geometry(&c, 1), generate_static_geometry(&c, 1));
    }

    #[test]
    fn powers_sum_to_one() {
        for c in [ScenarioConfig::los_desk(), ScenarioConfig::nlos_desk()] {
            let geo = generate_static_geometry(&c, 0);
            let total: f64 = geo.iter().flat_map(|c| &c.subpaths).map(|s| s.power).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn isotropic_gain_ignores_rotation() {
        let mut c = ScenarioConfig::los_desk();
        c.rotation_gain = super::super::config::RotationGain::isotropic();
        let geo = generate_static_geometry(&c, 0);
        let (cl, ray) = (&geo[1], &geo[1].subpaths[0]);
        let mut pose = UserPose {
            position: [0.3, 0.2, 0.0],
            rotation_h: 0.0,
            rotation_v: 0.0,
        };
        let a = path_gain(cl, ray, &pose, &c).norm();
        pose.rotation_h = 2.0;
        pose.rotation_v = 0.4;
        assert!((path_gain(cl, ray, &pose, &c).norm() - a).abs() < 1e-15);
    }

    #[test]
    fn trajectory_stays_in_cell() {
        let c = ScenarioConfig::los_desk();
        let mut rng = rng_for(3, &["walk"]);
        for p in random_walk(&c, 2, 200, &mut rng) {
            assert!(p.position[0] >= 2.0 && p.position[0] <= 3.0);
            assert!(p.position[1] >= 0.0 && p.position[1] <= 1.0);
        }
    }
}
