//! Phase diagram tools: the L0 and L1 lines, the empirical EP transition
//! located by bisection, and grid sweeps over `(ρ, α)`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ep::{EpConfig, EpMode};
use crate::error::{Error, Result};
use crate::io::csv_value;
use crate::metrics::{mse, mse_decomposition, pearson_r};
use crate::prior::PriorParams;
use crate::problem::{MatrixKind, ProblemSpec};
use crate::rng::derive_seed;

/// Standard Gaussian upper tail `H(x) = ∫ₓ^∞ e^{-t²/2}/√(2π) dt`.
pub fn gauss_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

fn gauss_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// A solution `(α, χ̂)` of the L1 system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Solution {
    pub alpha: f64,
    pub chi: f64,
    pub iterations: usize,
    /// Whether the fixed point stalled and the bracketed root finder was used.
    pub bracketed: bool,
}

/// Residuals of the two equations defining the L1 line:
/// `α - [2(1-ρ)H(χ̂^{-1/2}) + ρ]` and
/// `χ̂ - α⁻¹[2(1-ρ)((χ̂+1)H(χ̂^{-1/2}) - χ̂^{1/2}e^{-1/(2χ̂)}/√(2π)) + ρ(χ̂+1)]`.
pub fn l1_residuals(rho: f64, alpha: f64, chi: f64) -> (f64, f64) {
    let x = 1.0 / chi.sqrt();
    let h = gauss_tail(x);
    let first = alpha - (2.0 * (1.0 - rho) * h + rho);
    let rhs =
        2.0 * (1.0 - rho) * ((chi + 1.0) * h - chi.sqrt() * gauss_density(x)) + rho * (chi + 1.0);
    (first, chi - rhs / alpha)
}

const L1_TOL: f64 = 1e-13;
const L1_MAX_ITER: usize = 100_000;
const L1_DAMPING: f64 = 0.5;

fn l1_alpha(rho: f64, chi: f64) -> f64 {
    2.0 * (1.0 - rho) * gauss_tail(1.0 / chi.sqrt()) + rho
}

fn l1_converged(rho: f64, alpha: f64, chi: f64) -> bool {
    let (r1, r2) = l1_residuals(rho, alpha, chi);
    r1.abs() < L1_TOL && r2.abs() < L1_TOL * chi.max(1.0)
}

/// Solves the L1 system by damped fixed-point iteration from `χ̂ = 1`,
/// falling back to bisection on `ln χ̂` when the iteration stalls.
pub fn l1_solve(rho0: f64, alpha_hint: f64) -> Result<L1Solution> {
    if !(rho0 > 0.0 && rho0 <= 1.0) {
        return Err(Error::param(format!("density {rho0} outside (0, 1]")));
    }
    if rho0 == 1.0 {
        return Ok(L1Solution {
            alpha: 1.0,
            chi: 1.0,
            iterations: 0,
            bracketed: false,
        });
    }
    let mut chi = 1.0;
    let mut alpha = if alpha_hint > 0.0 && alpha_hint.is_finite() {
        alpha_hint
    } else {
        l1_alpha(rho0, chi)
    };
    for it in 1..=L1_MAX_ITER {
        let (_, r2) = l1_residuals(rho0, alpha, chi);
        let next = chi - L1_DAMPING * r2;
        chi = if next > 0.0 && next.is_finite() {
            next
        } else {
            0.5 * chi
        };
        alpha = l1_alpha(rho0, chi);
        if l1_converged(rho0, alpha, chi) {
            return Ok(L1Solution {
                alpha,
                chi,
                iterations: it,
                bracketed: false,
            });
        }
    }
    l1_bracketed(rho0).ok_or_else(|| {
        let (r1, r2) = l1_residuals(rho0, alpha, chi);
        Error::numerical(format!(
            "L1 system at rho={rho0} did not converge: alpha={alpha}, chi={chi}, residuals ({r1:e}, {r2:e})"
        ))
    })
}

/// Eliminating α leaves `g(χ̂) = ρ - 2(1-ρ)(√χ̂ φ(χ̂^{-1/2}) - H(χ̂^{-1/2})) = 0`,
/// which is strictly decreasing in χ̂.
fn l1_bracketed(rho: f64) -> Option<L1Solution> {
    let g = |t: f64| {
        let chi = t.exp();
        let x = 1.0 / chi.sqrt();
        rho - 2.0 * (1.0 - rho) * (gauss_density(x) / x - gauss_tail(x))
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while g(lo) <= 0.0 {
        lo *= 2.0;
        if lo < -700.0 {
            return None;
        }
    }
    while g(hi) >= 0.0 {
        hi *= 2.0;
        if hi > 700.0 {
            return None;
        }
    }
    let mut iterations = 0;
    while hi - lo > 1e-15 * lo.abs().max(hi.abs()).max(1.0) && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let chi = (0.5 * (lo + hi)).exp();
    Some(L1Solution {
        alpha: l1_alpha(rho, chi),
        chi,
        iterations,
        bracketed: true,
    })
}

/// `α₁(ρ₀)`, the L1 minimization line.
pub fn l1_line(rho0: f64, alpha_hint: f64) -> Result<f64> {
    l1_solve(rho0, alpha_hint).map(|s| s.alpha)
}

/// `α = ρ₀`, the counting bound.
pub fn l0_line(rho0: f64) -> Result<f64> {
    if !(rho0 > 0.0 && rho0 <= 1.0) {
        return Err(Error::param(format!("density {rho0} outside (0, 1]")));
    }
    Ok(rho0)
}

/// Reconstruction error of one fresh random instance at measurement rate α.
pub trait MseProbe {
    fn mse(&self, alpha: f64, seed: u64) -> Result<f64>;
}

impl<F: Fn(f64, u64) -> Result<f64>> MseProbe for F {
    fn mse(&self, alpha: f64, seed: u64) -> Result<f64> {
        self(alpha, seed)
    }
}

/// Runs EP with `ρ` given on noiseless synthetic instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpProbe {
    pub n: usize,
    pub rho: f64,
    pub lambda: f64,
    pub kind: MatrixKind,
    pub mode: EpMode,
    pub config: EpConfig,
}

impl EpProbe {
    pub fn new(n: usize, rho: f64) -> Self {
        EpProbe {
            n,
            rho,
            lambda: 1.0,
            kind: MatrixKind::Iid,
            mode: EpMode::FiniteT,
            config: EpConfig::default(),
        }
    }
}

impl MseProbe for EpProbe {
    fn mse(&self, alpha: f64, seed: u64) -> Result<f64> {
        let mut spec = ProblemSpec::iid(self.n, self.rho, alpha).with_kind(self.kind);
        spec.lambda = self.lambda;
        let problem = spec.generate(seed)?;
        let result = self.mode.run(
            &problem,
            PriorParams::new(self.rho, self.lambda)?,
            &self.config,
        )?;
        let truth = problem
            .truth
            .as_ref()
            .expect("generated problems carry their truth");
        mse(&truth.values, &result.mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionSpec {
    pub n: usize,
    pub rho0: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Threshold on `|MSE(α₁) - MSE(α*)|`.
    pub delta: f64,
    pub dalpha_min: f64,
    /// Instances averaged per probe.
    pub probes: usize,
    /// Fresh-seed retries for a failing probe.
    pub retries: usize,
    pub seed: u64,
}

impl BisectionSpec {
    /// Starts between the L0 and L1 lines with `δ = 1e-5`, `Δα_min = 0.005`.
    pub fn new(n: usize, rho0: f64, seed: u64) -> Result<Self> {
        Ok(BisectionSpec {
            n,
            rho0,
            alpha0: l0_line(rho0)?,
            alpha1: l1_line(rho0, 0.0)?,
            delta: 1e-5,
            dalpha_min: 0.005,
            probes: 1,
            retries: 5,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("N must be positive"));
        }
        if !(self.rho0 > 0.0 && self.rho0 <= 1.0) {
            return Err(Error::param(format!(
                "density {} outside (0, 1]",
                self.rho0
            )));
        }
        if !(self.alpha0 < self.alpha1) {
            return Err(Error::param(format!(
                "bracket [{}, {}] must be increasing",
                self.alpha0, self.alpha1
            )));
        }
        if !(self.delta > 0.0) || !(self.dalpha_min > 0.0) {
            return Err(Error::param("delta and dalpha_min must be positive"));
        }
        if self.probes == 0 {
            return Err(Error::param("at least one probe per step is needed"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha_star: f64,
    pub mse_alpha1: f64,
    pub mse_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionOutcome {
    pub alpha_star: f64,
    /// Bracket and errors before each update.
    pub steps: Vec<BisectionStep>,
}

fn probe_mean<P: MseProbe + ?Sized>(
    spec: &BisectionSpec,
    probe: &P,
    alpha: f64,
    path: [u64; 2],
) -> Result<f64> {
    let mut total = 0.0;
    for t in 0..spec.probes as u64 {
        let mut last = None;
        let mut value = None;
        for attempt in 0..=spec.retries as u64 {
            let seed = derive_seed(spec.seed, &[path[0], path[1], t, attempt]);
            match probe.mse(alpha, seed) {
                Ok(v) if v.is_finite() => {
                    value = Some(v);
                    break;
                }
                Ok(v) => last = Some(format!("non-finite MSE {v}")),
                Err(e) => last = Some(e.to_string()),
            }
        }
        total += value.ok_or_else(|| {
            Error::numerical(format!(
                "probe at rho={} alpha={alpha} failed {} times; last: {}",
                spec.rho0,
                spec.retries + 1,
                last.unwrap_or_default()
            ))
        })?;
    }
    Ok(total / spec.probes as f64)
}

/// Locates the EP transition between `alpha0` (failure) and `alpha1`
/// (success) by comparing the error at the midpoint with the error at
/// `alpha1` on fresh instances.
pub fn bisect_transition<P: MseProbe + ?Sized>(
    spec: &BisectionSpec,
    probe: &P,
) -> Result<BisectionOutcome> {
    spec.validate()?;
    let (mut a0, mut a1) = (spec.alpha0, spec.alpha1);
    let mut star = 0.5 * (a0 + a1);
    let mut steps = Vec::new();
    loop {
        let it = steps.len() as u64;
        let mse_alpha1 = probe_mean(spec, probe, a1, [it, 0])?;
        let mse_star = probe_mean(spec, probe, star, [it, 1])?;
        steps.push(BisectionStep {
            alpha0: a0,
            alpha1: a1,
            alpha_star: star,
            mse_alpha1,
            mse_star,
        });
        if (mse_alpha1 - mse_star).abs() > spec.delta {
            a0 = star;
        } else {
            a1 = star;
        }
        star = 0.5 * (a0 + a1);
        if (a1 - a0) / 2.0 < spec.dalpha_min {
            break;
        }
    }
    Ok(BisectionOutcome {
        alpha_star: star,
        steps,
    })
}

/// Rows of a transition-line table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub rho: f64,
    pub alpha_l0: f64,
    pub alpha_l1: f64,
    pub alpha_ep: f64,
}

pub const TRANSITION_CSV_HEADER: &str = "rho,alpha_l0,alpha_l1,alpha_ep";

pub fn transition_csv(rows: &[TransitionRow]) -> String {
    let mut out = format!("{TRANSITION_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_value(r.rho),
            csv_value(r.alpha_l0),
            csv_value(r.alpha_l1),
            csv_value(r.alpha_ep)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGridSpec {
    pub n: usize,
    pub rho_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub trials_per_point: usize,
    pub seed: u64,
    pub mode: EpMode,
    pub kind: MatrixKind,
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::param(format!("{name} grid is empty")));
    }
    if grid.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
        return Err(Error::param(format!(
            "{name} grid values must lie in (0, 1]"
        )));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::param(format!(
            "{name} grid must be strictly increasing"
        )));
    }
    Ok(())
}

impl PhaseGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("N must be positive"));
        }
        if self.trials_per_point == 0 {
            return Err(Error::param("trials_per_point must be positive"));
        }
        check_grid("rho", &self.rho_grid)?;
        check_grid("alpha", &self.alpha_grid)
    }
}

/// Outcome of one reconstruction in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub rho: f64,
    pub alpha: f64,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub converged: bool,
    pub sweeps: usize,
    /// `None` when undefined or when the run failed.
    pub r: Option<f64>,
    pub mse: f64,
    pub mse_head: f64,
    pub mse_tail: f64,
    pub wall_ms: f64,
    /// Error message of a failed run, which is recorded as not converged.
    pub error: Option<String>,
}

pub const PHASE_CSV_HEADER: &str =
    "rho,alpha,N,trial,seed,converged,sweeps,r,mse,mse_head,mse_tail,wall_ms";

pub fn phase_csv(points: &[PhasePoint]) -> String {
    let mut out = format!("{PHASE_CSV_HEADER}\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_value(p.rho),
            csv_value(p.alpha),
            p.n,
            p.trial,
            p.seed,
            p.converged,
            p.sweeps,
            csv_value(p.r.unwrap_or(f64::NAN)),
            csv_value(p.mse),
            csv_value(p.mse_head),
            csv_value(p.mse_tail),
            csv_value(p.wall_ms)
        );
    }
    out
}

/// Seed of trial `trial` in cell `(rho_idx, alpha_idx)`.
pub fn trial_seed(root: u64, rho_idx: usize, alpha_idx: usize, trial: usize) -> u64 {
    derive_seed(root, &[rho_idx as u64, alpha_idx as u64, trial as u64])
}

/// One reconstruction at `(ρ, α)`; failures come back as non-converged
/// points carrying the error message.
pub fn run_trial(
    n: usize,
    rho: f64,
    alpha: f64,
    lambda: f64,
    kind: MatrixKind,
    mode: EpMode,
    config: &EpConfig,
    seed: u64,
) -> PhasePoint {
    let start = Instant::now();
    let mut point = PhasePoint {
        rho,
        alpha,
        n,
        trial: 0,
        seed,
        converged: false,
        sweeps: 0,
        r: None,
        mse: f64::NAN,
        mse_head: f64::NAN,
        mse_tail: f64::NAN,
        wall_ms: 0.0,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let mut spec = ProblemSpec::iid(n, rho, alpha).with_kind(kind);
        spec.lambda = lambda;
        let problem = spec.generate(seed)?;
        let result = mode.run(&problem, PriorParams::new(rho, lambda)?, config)?;
        let truth = problem
            .truth
            .as_ref()
            .expect("generated problems carry their truth");
        let split = mse_decomposition(truth, &result.mean)?;
        point.converged = result.converged;
        point.sweeps = result.sweeps_used;
        point.r = pearson_r(&truth.values, &result.mean).ok();
        point.mse = mse(&truth.values, &result.mean)?;
        point.mse_head = split.head;
        point.mse_tail = split.tail;
        Ok(())
    })();
    if let Err(e) = outcome {
        point.converged = false;
        point.error = Some(e.to_string());
    }
    point.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    point
}

/// Runs every `(ρ, α, trial)` of the grid on the current rayon pool. The
/// solver is given the cell's ρ and `prior.lambda`. Output is sorted by
/// `(ρ, α, trial)` and does not depend on the number of threads, apart from
/// `wall_ms`.
pub fn phase_sweep(
    spec: &PhaseGridSpec,
    prior: PriorParams,
    config: &EpConfig,
) -> Result<Vec<PhasePoint>> {
    spec.validate()?;
    prior.validate()?;
    config.validate()?;
    let mut jobs = Vec::new();
    for (ri, &rho) in spec.rho_grid.iter().enumerate() {
        for (ai, &alpha) in spec.alpha_grid.iter().enumerate() {
            for trial in 0..spec.trials_per_point {
                jobs.push((ri, rho, ai, alpha, trial));
            }
        }
    }
    Ok(jobs
        .into_par_iter()
        .map(|(ri, rho, ai, alpha, trial)| {
            let seed = trial_seed(spec.seed, ri, ai, trial);
            let mut p = run_trial(
                spec.n,
                rho,
                alpha,
                prior.lambda,
                spec.kind,
                spec.mode,
                config,
                seed,
            );
            p.trial = trial;
            p
        })
        .collect())
}
