mod common;

use std::f64::consts::PI;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use epsense::prior::{prior_density_pointwise, tilted_moments, CavityMarginal, PriorParams};

fn moments(mean: f64, variance: f64, rho: f64, lambda: f64) -> epsense::prior::TiltedMoments {
    tilted_moments(CavityMarginal { mean, variance }, PriorParams::new(rho, lambda).unwrap()).unwrap()
}

#[test]
fn pure_spike() {
    let t = moments(0.7, 2.0, 0.0, 1.0);
    assert_eq!((t.m1, t.m2), (0.0, 0.0));
}

#[test]
fn pure_slab_is_gaussian_product() {
    let t = moments(1.0, 1.0, 1.0, 1.0);
    assert_relative_eq!(t.m1, 0.5, max_relative = 1e-15);
    assert_relative_eq!(t.m2, 0.75, max_relative = 1e-15);
}

#[test]
fn half_density_matches_quadrature() {
    let t = moments(1.0, 1.0, 0.5, 1.0);
    let (lz, m1, m2) = common::tilted_by_quadrature(1.0, 1.0, 0.5, 1.0);
    assert_relative_eq!(t.log_z, lz, max_relative = 1e-8);
    assert_relative_eq!(t.m1, m1, max_relative = 1e-8);
    assert_relative_eq!(t.m2, m2, max_relative = 1e-8);
}

#[test]
fn random_grid_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let m = rng.random_range(-10.0..10.0);
        let v = 10f64.powf(rng.random_range(-3.0..3.0));
        let rho = rng.random_range(0.01..0.99);
        let lambda = 10f64.powf(rng.random_range(-1.0..1.0));
        let t = moments(m, v, rho, lambda);
        let (lz, m1, m2) = common::tilted_by_quadrature(m, v, rho, lambda);
        let ok = |a: f64, b: f64| (a - b).abs() < 1e-8 * b.abs().max(1.0);
        assert!(ok(t.log_z, lz) && ok(t.m1, m1) && ok(t.m2, m2), "m={m} v={v} rho={rho} lambda={lambda}");
    }
}

#[test]
fn pointwise_density() {
    let p = PriorParams::new(0.3, 1.0).unwrap();
    let (spike, slab) = prior_density_pointwise(0.0, p);
    assert_relative_eq!(spike, 0.7);
    assert_relative_eq!(slab, 0.3 / (2.0 * PI).sqrt(), max_relative = 1e-15);

    let (spike, slab) = prior_density_pointwise(1.0, PriorParams::new(1.0, 1.0).unwrap());
    assert_eq!(spike, 0.0);
    assert_relative_eq!(slab, (-0.5f64).exp() / (2.0 * PI).sqrt(), max_relative = 1e-15);
}

#[test]
fn prior_is_normalized() {
    for &(rho, lambda) in &[(0.3, 1.0), (0.9, 0.2), (0.05, 7.0)] {
        let p = PriorParams::new(rho, lambda).unwrap();
        let spike = prior_density_pointwise(0.0, p).0;
        let s = 40.0 * lambda.sqrt();
        let slab = common::integrate(|w| prior_density_pointwise(w, p).1, -s, s, 1e-14);
        assert_relative_eq!(spike + slab, 1.0, max_relative = 1e-12);
    }
}

#[test]
fn invalid_inputs() {
    let p = PriorParams::new(0.5, 1.0).unwrap();
    assert!(tilted_moments(CavityMarginal { mean: 0.0, variance: 0.0 }, p).is_err());
    assert!(tilted_moments(CavityMarginal { mean: 0.0, variance: -1.0 }, p).is_err());
    assert!(PriorParams::new(1.2, 1.0).is_err());
    assert!(PriorParams::new(0.5, 0.0).is_err());
}

#[test]
fn confident_cavities_do_not_underflow() {
    // exp(-m²/2v) is far below the smallest double here.
    let t = moments(30.0, 1e-3, 0.1, 1.0);
    assert!(t.log_z.is_finite());
    assert_relative_eq!(t.m1, 30.0 / (1.0 + 1e-3), max_relative = 1e-12);
    let t = moments(1e-3, 1e-12, 0.1, 1.0);
    assert!(t.m1.abs() < 1e-3 && t.var >= 0.0);
}

proptest! {
    #[test]
    fn tilted_variance_positive(m in -10.0f64..10.0, lv in -3.0f64..3.0, rho in 0.001f64..1.0, ll in -1.0f64..1.0) {
        let t = moments(m, 10f64.powf(lv), rho, 10f64.powf(ll));
        prop_assert!(t.var > 0.0);
        prop_assert!(t.m2 >= t.m1 * t.m1);
    }

    #[test]
    fn odd_even_symmetry(m in -10.0f64..10.0, lv in -3.0f64..3.0, rho in 0.01f64..0.99, ll in -1.0f64..1.0) {
        let (v, l) = (10f64.powf(lv), 10f64.powf(ll));
        let a = moments(m, v, rho, l);
        let b = moments(-m, v, rho, l);
        prop_assert_eq!(a.m1, -b.m1);
        prop_assert_eq!(a.m2, b.m2);
    }

    #[test]
    fn dense_limit_is_exact(m in -10.0f64..10.0, lv in -3.0f64..3.0, ll in -1.0f64..1.0) {
        let (v, l) = (10f64.powf(lv), 10f64.powf(ll));
        let t = moments(m, v, 1.0, l);
        let mean = l * m / (l + v);
        let second = l * v / (l + v) + mean * mean;
        prop_assert!((t.m1 - mean).abs() <= 1e-12 * mean.abs().max(1e-300));
        prop_assert!((t.m2 - second).abs() <= 1e-12 * second);
    }
}
