mod common;

use std::cell::Cell;

use approx::assert_relative_eq;
use proptest::prelude::*;

use epsense::ep::{EpConfig, EpMode};
use epsense::error::{Error, Result};
use epsense::phase::{
    bisect_transition, gauss_tail, l0_line, l1_line, l1_residuals, l1_solve, phase_csv,
    phase_sweep, run_trial, transition_csv, trial_seed, BisectionSpec, PhaseGridSpec,
    TransitionRow, PHASE_CSV_HEADER,
};
use epsense::prior::PriorParams;
use epsense::problem::MatrixKind;

#[test]
fn gaussian_tail_values() {
    assert_eq!(gauss_tail(0.0), 0.5);
    assert_relative_eq!(gauss_tail(1.0), 0.158_655_253_931_457_05, max_relative = 1e-15);
    assert_relative_eq!(gauss_tail(-1.0), 1.0 - 0.158_655_253_931_457_05, max_relative = 1e-15);
    for x in [0.3, 2.0, 5.0, 9.0] {
        assert_relative_eq!(gauss_tail(x), common::tail_by_quadrature(x), max_relative = 1e-10);
    }
}

#[test]
fn dense_signals_need_every_measurement() {
    let s = l1_solve(1.0, 0.0).unwrap();
    assert_eq!(s.alpha, 1.0);
    assert_eq!(l0_line(1.0).unwrap(), 1.0);
}

#[test]
fn l1_residuals_are_tiny() {
    for i in 1..100 {
        let rho = i as f64 / 100.0;
        let s = l1_solve(rho, 0.0).unwrap();
        let (r1, r2) = l1_residuals(rho, s.alpha, s.chi);
        assert!(r1.abs() < 1e-10 && r2.abs() < 1e-10, "rho {rho}: {r1} {r2}");
    }
}

#[test]
fn l1_matches_grid_oracle() {
    for rho in [0.1, 0.5, 0.9] {
        let (alpha, _) = common::l1_grid_oracle(rho);
        assert!((l1_line(rho, 0.0).unwrap() - alpha).abs() < 1e-6, "rho {rho}");
    }
}

#[test]
fn l1_is_increasing_and_above_l0() {
    let mut last = 0.0;
    for i in 1..=50 {
        let rho = i as f64 / 51.0;
        let a = l1_line(rho, 0.0).unwrap();
        assert!(a > last, "rho {rho}");
        assert!(l0_line(rho).unwrap() <= a && a <= 1.0);
        last = a;
    }
}

#[test]
fn invalid_densities() {
    assert!(l1_line(0.0, 0.0).is_err());
    assert!(l1_line(1.5, 0.0).is_err());
    assert!(l0_line(-0.1).is_err());
}

fn step_probe(edge: f64) -> impl Fn(f64, u64) -> Result<f64> {
    move |alpha, _| Ok(if alpha < edge { 0.3 } else { 1e-12 })
}

#[test]
fn bisection_finds_a_step() {
    let spec = BisectionSpec {
        dalpha_min: 0.001,
        ..BisectionSpec::new(50, 0.3, 9).unwrap()
    };
    let out = bisect_transition(&spec, &step_probe(0.47)).unwrap();
    assert!((out.alpha_star - 0.47).abs() < 2.0 * spec.dalpha_min, "{}", out.alpha_star);
    let last = out.steps.last().unwrap();
    assert!(last.alpha0 <= 0.47 && 0.47 <= last.alpha1);
    // The bracket halves every step.
    for w in out.steps.windows(2) {
        assert_relative_eq!(w[1].alpha1 - w[1].alpha0, 0.5 * (w[0].alpha1 - w[0].alpha0), max_relative = 1e-12);
    }
}

#[test]
fn bisection_stops_on_the_half_width() {
    let spec = BisectionSpec {
        alpha0: 0.0,
        alpha1: 1.0,
        dalpha_min: 0.1,
        ..BisectionSpec::new(10, 0.5, 0).unwrap()
    };
    // Half-widths 0.25, 0.125, 0.0625: three steps.
    let out = bisect_transition(&spec, &step_probe(0.9)).unwrap();
    assert_eq!(out.steps.len(), 3);
}

#[test]
fn failing_probes_are_retried_then_reported() {
    let calls = Cell::new(0);
    let flaky = |alpha: f64, _seed: u64| {
        calls.set(calls.get() + 1);
        if calls.get() % 2 == 1 {
            Err(Error::Numerical("flaky".into()))
        } else {
            step_probe(0.5)(alpha, 0)
        }
    };
    let spec = BisectionSpec::new(10, 0.3, 1).unwrap();
    assert!(bisect_transition(&spec, &flaky).is_ok());

    let broken = |_: f64, _: u64| -> Result<f64> { Err(Error::Numerical("always".into())) };
    let err = bisect_transition(&spec, &broken).unwrap_err();
    assert!(err.to_string().contains("failed 6 times"), "{err}");
}

#[test]
fn bisection_seeds_are_fresh_and_reproducible() {
    let seen = std::cell::RefCell::new(Vec::new());
    let record = |alpha: f64, seed: u64| {
        seen.borrow_mut().push(seed);
        step_probe(0.5)(alpha, seed)
    };
    let spec = BisectionSpec::new(10, 0.3, 4).unwrap();
    let a = bisect_transition(&spec, &record).unwrap();
    let first = seen.take();
    let b = bisect_transition(&spec, &record).unwrap();
    assert_eq!(a, b);
    assert_eq!(first, seen.take());
    let mut unique = first.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), first.len());
}

#[test]
fn below_the_counting_bound_fails() {
    for seed in 0..3 {
        let p = run_trial(100, 0.5, 0.3, 1.0, MatrixKind::Iid, EpMode::FiniteT, &EpConfig::default(), seed);
        assert!(p.mse > 1e-3, "seed {seed}: {}", p.mse);
    }
}

fn small_grid(seed: u64) -> PhaseGridSpec {
    PhaseGridSpec {
        n: 30,
        rho_grid: vec![0.1, 0.2, 0.3],
        alpha_grid: vec![0.4, 0.6, 0.8],
        trials_per_point: 2,
        seed,
        mode: EpMode::FiniteT,
        kind: MatrixKind::Iid,
    }
}

fn sweep_on(threads: usize, spec: &PhaseGridSpec) -> Vec<epsense::phase::PhasePoint> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let prior = PriorParams::new(0.5, 1.0).unwrap();
    pool.install(|| phase_sweep(spec, prior, &EpConfig::default()).unwrap())
}

#[test]
fn sweep_is_ordered_and_thread_independent() {
    let spec = small_grid(3);
    let mut one = sweep_on(1, &spec);
    let mut four = sweep_on(4, &spec);
    assert_eq!(one.len(), 18);
    for (i, p) in one.iter().enumerate() {
        let (ri, ai, t) = (i / 6, (i / 2) % 3, i % 2);
        assert_eq!((p.rho, p.alpha, p.trial), (spec.rho_grid[ri], spec.alpha_grid[ai], t));
        assert_eq!(p.seed, trial_seed(3, ri, ai, t));
        assert!(p.wall_ms > 0.0);
        assert!(p.error.is_none());
    }
    for p in one.iter_mut().chain(four.iter_mut()) {
        p.wall_ms = 0.0;
    }
    assert_eq!(one, four);
    let csv = phase_csv(&one);
    assert!(csv.starts_with(PHASE_CSV_HEADER));
    assert_eq!(csv.lines().count(), 19);
}

#[test]
fn single_cell_sweep() {
    let spec = PhaseGridSpec {
        rho_grid: vec![0.2],
        alpha_grid: vec![0.7],
        trials_per_point: 1,
        ..small_grid(0)
    };
    let points = sweep_on(1, &spec);
    assert_eq!(points.len(), 1);
    assert!(points[0].converged && points[0].mse < 1e-10);
}

#[test]
fn grids_are_validated() {
    let prior = PriorParams::new(0.5, 1.0).unwrap();
    let cfg = EpConfig::default();
    let bad = [
        PhaseGridSpec { rho_grid: vec![], ..small_grid(0) },
        PhaseGridSpec { alpha_grid: vec![0.5, 0.4], ..small_grid(0) },
        PhaseGridSpec { alpha_grid: vec![1.2], ..small_grid(0) },
        PhaseGridSpec { trials_per_point: 0, ..small_grid(0) },
    ];
    for spec in bad {
        assert!(phase_sweep(&spec, prior, &cfg).is_err());
    }
}

#[test]
fn transition_table() {
    let rows = [TransitionRow { rho: 0.2, alpha_l0: 0.2, alpha_l1: 0.5, alpha_ep: 0.3 }];
    assert_eq!(transition_csv(&rows), "rho,alpha_l0,alpha_l1,alpha_ep\n0.2,0.2,0.5,0.3\n");
}

proptest! {
    #[test]
    fn l1_lies_between_bounds(rho in 0.001f64..0.999) {
        let s = l1_solve(rho, 0.0).unwrap();
        prop_assert!(s.alpha > rho && s.alpha < 1.0);
        prop_assert!(s.chi > 0.0);
    }
}
