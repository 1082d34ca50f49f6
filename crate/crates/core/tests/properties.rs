use std::f64::consts::TAU;

use num_complex::Complex64;
use proptest::prelude::*;

use dckm_core::beliefs::{
    bessel_ratio, bessel_ratio_inverse, bg_posterior, trig_moments, vm_multiply, BernoulliGaussian, PathBelief,
    VonMises,
};
use dckm_core::manifold::{
    expected_gram_rows, expected_steering, nmse_db, spatial_steering, steering, wrap_angle, wrap_signed, ArrayDims,
    NMSE_FLOOR_DB,
};
use dckm_core::seeds::derive_seed;
use dckm_core::spectral::{search, SearchConfig, SpectralObjective};
use dckm_core::{CMatrix, CVector};

fn complex() -> impl Strategy<Value = Complex64> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(re, im)| Complex64::new(re, im))
}

fn belief() -> impl Strategy<Value = VonMises> {
    (0.0..TAU, 0.0..200.0f64).prop_map(|(mu, kappa)| VonMises::new(mu, kappa))
}

proptest! {
    #[test]
    fn steering_vectors_have_unit_norm(x in 1usize..96, w in -20.0..20.0f64) {
        prop_assert!((steering(x, w).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spatial_steering_has_unit_norm(m1 in 1usize..8, m2 in 1usize..8, t in 0.0..TAU, p in 0.0..TAU) {
        prop_assert!((spatial_steering(t, p, m1, m2).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expected_steering_shrinks_toward_zero(x in 1usize..64, b in belief()) {
        let e = expected_steering(x, &b);
        prop_assert!(e.norm() <= 1.0 + 1e-12);
        // entry 0 carries no phase and the full mass
        prop_assert!((e[0] - Complex64::from(1.0 / (x as f64).sqrt())).norm() < 1e-12);
    }

    #[test]
    fn wraps_land_in_their_ranges(x in -1e4..1e4f64) {
        let a = wrap_angle(x);
        prop_assert!((0.0..TAU).contains(&a));
        let s = wrap_signed(x);
        prop_assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&s));
        prop_assert!(wrap_signed(a - s).abs() < 1e-9);
    }

    #[test]
    fn bessel_ratio_is_monotone_and_invertible(k in 1e-3..1e3f64, dk in 1e-3..10.0f64) {
        let r = bessel_ratio(k);
        prop_assert!((0.0..1.0).contains(&r));
        prop_assert!(bessel_ratio(k + dk) > r);
        let back = bessel_ratio_inverse(r).unwrap();
        prop_assert!((back - k).abs() <= 1e-8 * k);
    }

    #[test]
    fn trig_moments_decrease(k in 0.0..500.0f64) {
        let m = trig_moments(k, 32);
        prop_assert!((m[0] - 1.0).abs() < 1e-15);
        for w in m.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15 && w[1] >= 0.0);
        }
    }

    #[test]
    fn von_mises_product_commutes(a in belief(), b in belief()) {
        let ab = vm_multiply(a, b);
        let ba = vm_multiply(b, a);
        prop_assert!((ab.kappa - ba.kappa).abs() <= 1e-9 * ab.kappa.max(1.0));
        if ab.kappa > 1e-6 {
            prop_assert!(wrap_signed(ab.mu - ba.mu).abs() < 1e-9);
        }
    }

    #[test]
    fn spike_and_slab_posterior_is_proper(
        lambda in 0.0..=1.0f64,
        vp in 0.0..5.0f64,
        mg in complex(),
        vg in 1e-3..5.0f64,
    ) {
        let prior = BernoulliGaussian { lambda, mean: Complex64::new(0.0, 0.0), variance: vp };
        let post = bg_posterior(prior, mg, vg);
        prop_assert!((0.0..=1.0).contains(&post.lambda));
        prop_assert!(post.variance >= 0.0 && post.variance <= vp.min(vg) + 1e-12);
        prop_assert!(post.mean.norm() <= mg.norm() + 1e-12);
    }

    #[test]
    fn nmse_is_scale_invariant(entries in prop::collection::vec(complex(), 6), s in 0.1..10.0f64) {
        let t = CMatrix::from_iterator(3, 2, entries.iter().copied());
        prop_assume!(t.norm() > 1e-3);
        let e = CMatrix::from_element(3, 2, Complex64::new(0.1, -0.2));
        let a = nmse_db(&(&t + &e), &t).unwrap();
        let b = nmse_db(&((&t + &e) * Complex64::from(s)), &(&t * Complex64::from(s))).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert_eq!(nmse_db(&t, &t).unwrap(), NMSE_FLOOR_DB);
    }

    #[test]
    fn search_never_loses_to_the_grid(entries in prop::collection::vec(complex(), 2..40)) {
        let eta = CVector::from_vec(entries);
        prop_assume!(eta.iter().skip(1).any(|v| v.norm() > 1e-6));
        let obj = SpectralObjective::new(eta);
        let cfg = SearchConfig::default();
        let r = search(&obj, cfg).unwrap();
        let grid_max = obj.grid_values(cfg.offsets).into_iter().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.value >= grid_max - 1e-12 * grid_max.abs().max(1.0));
        prop_assert!((0.0..TAU).contains(&r.omega));
    }

    #[test]
    fn hermitian_form_matches_direct_evaluation(
        entries in prop::collection::vec(complex(), 16),
        w in 0.0..TAU,
        stride in 1usize..4,
    ) {
        let b = CMatrix::from_iterator(4, 4, entries.iter().copied());
        let q = &b * b.adjoint();
        let positions: Vec<usize> = (0..4).map(|i| i * stride).collect();
        let x = 4 * stride;
        let obj = SpectralObjective::from_hermitian_form(&q, &positions, 0.5, x);
        let v = CVector::from_iterator(4, positions.iter().map(|&p| Complex64::from_polar(1.0, -(p as f64) * w)));
        let direct = 0.5 * (v.adjoint() * &q * &v)[(0, 0)].re;
        prop_assert!((obj.value(w) - direct).abs() <= 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn expected_gram_is_hermitian_with_fixed_diagonal(
        params in prop::collection::vec((belief(), belief(), belief()), 1..5),
        keep in 1usize..5,
    ) {
        let dims = ArrayDims::new(16, 2, 2);
        let beliefs: Vec<PathBelief> = params.into_iter().map(|(tau, theta, phi)| PathBelief { tau, theta, phi }).collect();
        let rows: Vec<usize> = (0..dims.n).step_by(keep).collect();
        let g = expected_gram_rows(&beliefs, dims, &rows);
        prop_assert!((&g - g.adjoint()).norm() < 1e-12);
        for i in 0..beliefs.len() {
            prop_assert!((g[(i, i)].re - rows.len() as f64 / dims.n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn derived_seeds_depend_on_every_label(master in any::<u64>(), a in 0u32..1000, b in 0u32..1000) {
        let sa = a.to_string();
        let sb = b.to_string();
        prop_assert_eq!(derive_seed(master, &["x", &sa]), derive_seed(master, &["x", &sa]));
        if a != b {
            prop_assert_ne!(derive_seed(master, &["x", &sa]), derive_seed(master, &["x", &sb]));
        }
        prop_assert_ne!(derive_seed(master, &["x", &sa]), derive_seed(master.wrapping_add(1), &["x", &sa]));
    }
}
