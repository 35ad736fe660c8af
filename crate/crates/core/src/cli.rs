//! The `epsense` command line.
//!
//! Every subcommand accepts `--config FILE`, a JSON object whose keys are the
//! long flag names (`max_sweeps` or `max-sweeps`). Values from the file are
//! placed before the explicit flags, and a repeated flag keeps its last
//! value, so explicit flags win. `EPSENSE_JOBS` overrides `--jobs`.
//!
//! Exit codes: 0 success (including non-converged runs), 1 usage or
//! parameter error, 2 numerical or infeasible problem, 3 I/O or format error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ep::{EpConfig, EpMode, EpResult};
use crate::error::{Error, Result};
use crate::io::{self, csv_value, BundleMeta};
use crate::metrics::{mse, ReconReport};
use crate::omp::{omp_reconstruct, OmpConfig};
use crate::phase::{
    bisect_transition, l0_line, l1_line, phase_csv, transition_csv, BisectionSpec, EpProbe,
    PhaseGridSpec, TransitionRow,
};
use crate::prior::PriorParams;
use crate::problem::{support_size, MatrixKind, ProblemSpec};
use crate::rng::derive_seed;

pub const JOBS_ENV: &str = "EPSENSE_JOBS";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULT_FILE: &str = "result.json";
pub const ESTIMATE_FILE: &str = "w_hat.vec";
pub const RESULT_SCHEMA_VERSION: u32 = 1;
pub const COMPARE_CSV_HEADER: &str = "rho,alpha,N,k,trial,seed,solver,converged,sweeps,mse,wall_ms";

#[derive(Parser, Debug)]
#[command(
    name = "epsense",
    version,
    about = "Sparse reconstruction with Expectation Propagation"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic problem bundle.
    Gen(GenArgs),
    /// Run EP on a bundle.
    Reconstruct(ReconstructArgs),
    /// Sweep a (rho, alpha) grid.
    Phase(PhaseArgs),
    /// Locate the EP transition line by bisection.
    Bisect(BisectArgs),
    /// Run both EP solvers and OMP on identical instances.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CommonArgs {
    /// JSON file mirroring the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Record zero wall times and omit timestamps, for byte-identical reruns.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EpArgs {
    #[arg(long, default_value_t = EpConfig::default().beta)]
    pub beta: f64,
    #[arg(long, default_value_t = EpConfig::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = EpConfig::default().max_sweeps)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = EpConfig::default().damping)]
    pub damping: f64,
    /// Learn the prior density during the sweeps.
    #[arg(long)]
    pub learn_rho: bool,
    /// Newton steps instead of gradient steps for the density.
    #[arg(long)]
    pub rho_newton: bool,
    #[arg(long, default_value_t = EpConfig::default().eta)]
    pub eta: f64,
}

impl EpArgs {
    pub fn config(&self) -> EpConfig {
        EpConfig {
            beta: self.beta,
            tol: self.tol,
            max_sweeps: self.max_sweeps,
            damping: self.damping,
            learn_rho: self.learn_rho,
            rho_newton: self.rho_newton,
            eta: self.eta,
            ..EpConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    /// Number of measurements; defaults to round(alpha N).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, required_unless_present = "m")]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Rank of the correlated part of the row covariance.
    #[arg(long)]
    pub correlated_k: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub noise_variance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = EpMode::FiniteT)]
    pub mode: EpMode,
    /// Prior density; defaults to the bundle's.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Slab variance; defaults to the bundle's, else 1.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Starting density for `--learn-rho`.
    #[arg(long, default_value_t = 0.5)]
    pub rho_init: f64,
    #[command(flatten)]
    pub ep: EpArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct PhaseArgs {
    #[arg(long)]
    pub n: usize,
    /// Uniform step for both axes: step, 2 step, ... up to 1.
    #[arg(long)]
    pub grid: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value_t = EpMode::FiniteT)]
    pub mode: EpMode,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long)]
    pub correlated_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// CSV path; a `.manifest.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub ep: EpArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct BisectArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6")]
    pub rho_grid: Vec<f64>,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.005)]
    pub dalpha_min: f64,
    /// Instances averaged per probe.
    #[arg(long, default_value_t = 1)]
    pub probes: usize,
    #[arg(long, default_value_t = 5)]
    pub retries: usize,
    #[arg(long, default_value_t = EpMode::FiniteT)]
    pub mode: EpMode,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long)]
    pub correlated_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub ep: EpArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct CompareArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9,1.0")]
    pub alpha_grid: Vec<f64>,
    /// Rank of the correlated part; 0 gives i.i.d. matrices.
    #[arg(long, default_value_t = 5)]
    pub correlated_k: usize,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub ep: EpArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_snapshot: Value,
    pub root_seed: u64,
    pub artifact_version: String,
    /// Milliseconds since the Unix epoch; absent under `--no-timing`.
    pub started_unix_ms: Option<u64>,
    pub finished_unix_ms: Option<u64>,
    pub outputs: Vec<String>,
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub mode: EpMode,
    pub converged: bool,
    pub sweeps: usize,
    pub eps: f64,
    /// Prior density, or its starting value under learning.
    pub rho: f64,
    pub lambda: f64,
    pub rho_learned: Option<f64>,
    pub skipped_updates: usize,
    /// Present when the bundle carries the true signal.
    pub quality: Option<ReconReport>,
    pub wall_ms: f64,
    pub manifest: String,
}

impl ResultRecord {
    pub fn read(path: &Path) -> Result<Self> {
        let record: ResultRecord = io::read_json(path)?;
        if record.schema_version != RESULT_SCHEMA_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported schema version {}", record.schema_version),
            ));
        }
        Ok(record)
    }
}

/// One solver run in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub rho: f64,
    pub alpha: f64,
    pub n: usize,
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    pub solver: String,
    pub converged: bool,
    pub sweeps: usize,
    pub mse: f64,
    pub wall_ms: f64,
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    use std::fmt::Write as _;
    let mut out = format!("{COMPARE_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            csv_value(r.rho),
            csv_value(r.alpha),
            r.n,
            r.k,
            r.trial,
            r.seed,
            r.solver,
            r.converged,
            r.sweeps,
            csv_value(r.mse),
            csv_value(r.wall_ms)
        );
    }
    out
}

struct Clock {
    enabled: bool,
    started: Option<u64>,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl Clock {
    fn new(no_timing: bool) -> Self {
        Clock {
            enabled: !no_timing,
            started: (!no_timing).then(unix_ms),
        }
    }

    fn elapsed_ms(&self, since: Instant) -> f64 {
        if self.enabled {
            since.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    }

    fn manifest(
        &self,
        command: &str,
        snapshot: Value,
        seed: u64,
        outputs: Vec<String>,
    ) -> RunManifest {
        RunManifest {
            command: command.to_owned(),
            config_snapshot: snapshot,
            root_seed: seed,
            artifact_version: env!("CARGO_PKG_VERSION").to_owned(),
            started_unix_ms: self.started,
            finished_unix_ms: self.enabled.then(unix_ms),
            outputs,
        }
    }
}

fn snapshot<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).unwrap_or(Value::Null)
}

fn kind_of(k: Option<usize>) -> MatrixKind {
    match k {
        Some(k) if k > 0 => MatrixKind::Correlated(k),
        _ => MatrixKind::Iid,
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
        }
        _ => Ok(()),
    }
}

/// Thread count from `EPSENSE_JOBS`, else `--jobs`, else rayon's default.
fn job_count(flag: Option<usize>) -> Result<Option<usize>> {
    let jobs = match std::env::var(JOBS_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::param(format!("{JOBS_ENV}={v:?} is not a count")))?,
        ),
        _ => flag,
    };
    if jobs == Some(0) {
        return Err(Error::param("job count must be positive"));
    }
    Ok(jobs)
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = job_count(jobs)? {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// `step, 2 step, ...` up to 1, rounded to suppress accumulation error.
pub fn uniform_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::param(format!("grid step {step} outside (0, 1]")));
    }
    let count = (1.0 / step + 1e-9).floor() as usize;
    Ok((1..=count)
        .map(|i| (i as f64 * step * 1e12).round() / 1e12)
        .collect())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let clock = Clock::new(args.common.no_timing);
    let m = match (args.m, args.alpha) {
        (Some(m), _) => m,
        (None, Some(alpha)) => ((alpha * args.n as f64).round() as usize).max(1),
        (None, None) => return Err(Error::param("either --m or --alpha is required")),
    };
    let spec = ProblemSpec {
        n: args.n,
        m,
        rho: args.rho,
        lambda: args.lambda,
        kind: kind_of(args.correlated_k),
        noise_variance: args.noise_variance,
    };
    let problem = spec.generate(args.seed)?;
    let mut meta = BundleMeta::for_problem(&problem, args.rho, args.lambda);
    meta.manifest = Some(MANIFEST_FILE.to_owned());
    io::write_bundle(&args.out, &problem, &meta)?;
    let mut outputs = vec![
        io::MATRIX_FILE,
        io::MEASUREMENT_FILE,
        io::SIGNAL_FILE,
        io::META_FILE,
    ];
    if problem.truth.is_none() {
        outputs.retain(|f| *f != io::SIGNAL_FILE);
    }
    let manifest = clock.manifest(
        "gen",
        snapshot(args),
        args.seed,
        outputs.into_iter().map(String::from).collect(),
    );
    io::write_json(&args.out.join(MANIFEST_FILE), &manifest)
}

fn cmd_reconstruct(args: &ReconstructArgs) -> Result<()> {
    let clock = Clock::new(args.common.no_timing);
    let (problem, meta) = io::read_bundle(&args.bundle)?;
    let rho = if args.ep.learn_rho {
        args.rho_init
    } else {
        args.rho
            .or(meta.as_ref().map(|m| m.rho))
            .ok_or_else(|| Error::param("--rho is required when the bundle has no meta.json"))?
    };
    let lambda = args
        .lambda
        .or(meta.as_ref().map(|m| m.lambda))
        .unwrap_or(1.0);
    let config = args.ep.config();
    let start = Instant::now();
    let result = args
        .mode
        .run(&problem, PriorParams::new(rho, lambda)?, &config)?;
    let wall_ms = clock.elapsed_ms(start);
    let quality = problem
        .truth
        .as_ref()
        .map(|t| ReconReport::new(t, &result.mean, result.converged, result.sweeps_used))
        .transpose()?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    io::write_vector(&args.out.join(ESTIMATE_FILE), &result.mean)?;
    let record = ResultRecord {
        schema_version: RESULT_SCHEMA_VERSION,
        mode: args.mode,
        converged: result.converged,
        sweeps: result.sweeps_used,
        eps: result.final_eps,
        rho,
        lambda,
        rho_learned: result.rho_learned,
        skipped_updates: result.skipped_updates,
        quality,
        wall_ms,
        manifest: MANIFEST_FILE.to_owned(),
    };
    io::write_json(&args.out.join(RESULT_FILE), &record)?;
    let snap = serde_json::json!({ "args": snapshot(args), "ep": snapshot(&config) });
    let manifest = clock.manifest(
        "reconstruct",
        snap,
        problem.seed,
        vec![ESTIMATE_FILE.to_owned(), RESULT_FILE.to_owned()],
    );
    io::write_json(&args.out.join(MANIFEST_FILE), &manifest)
}

fn write_csv_with_manifest(path: &Path, csv: &str, manifest: &RunManifest) -> Result<()> {
    ensure_parent(path)?;
    io::write_text(path, csv)?;
    io::write_json(&sidecar(path), manifest)
}

fn cmd_phase(args: &PhaseArgs) -> Result<()> {
    let clock = Clock::new(args.common.no_timing);
    let step = args.grid.map(uniform_grid).transpose()?;
    let pick = |explicit: &Option<Vec<f64>>, axis: &str| {
        explicit
            .clone()
            .or_else(|| step.clone())
            .ok_or_else(|| Error::param(format!("--{axis}-grid or --grid is required")))
    };
    let spec = PhaseGridSpec {
        n: args.n,
        rho_grid: pick(&args.rho_grid, "rho")?,
        alpha_grid: pick(&args.alpha_grid, "alpha")?,
        trials_per_point: args.trials,
        seed: args.seed,
        mode: args.mode,
        kind: kind_of(args.correlated_k),
    };
    spec.validate()?;
    let config = args.ep.config();
    config.validate()?;
    PriorParams::new(spec.rho_grid[0], args.lambda)?;
    let mut points = with_pool(args.jobs, || {
        crate::phase::phase_sweep(
            &spec,
            PriorParams::new(spec.rho_grid[0], args.lambda)?,
            &config,
        )
    })??;
    if !clock.enabled {
        points.iter_mut().for_each(|p| p.wall_ms = 0.0);
    }
    let snap = serde_json::json!({ "args": snapshot(args), "grid": snapshot(&spec), "ep": snapshot(&config) });
    let manifest = clock.manifest("phase", snap, args.seed, vec![file_name(&args.out)]);
    write_csv_with_manifest(&args.out, &phase_csv(&points), &manifest)
}

fn cmd_bisect(args: &BisectArgs) -> Result<()> {
    let clock = Clock::new(args.common.no_timing);
    let config = args.ep.config();
    config.validate()?;
    let mut specs = Vec::with_capacity(args.rho_grid.len());
    for (ri, &rho) in args.rho_grid.iter().enumerate() {
        let mut spec = BisectionSpec::new(args.n, rho, derive_seed(args.seed, &[ri as u64]))?;
        spec.delta = args.delta;
        spec.dalpha_min = args.dalpha_min;
        spec.probes = args.probes;
        spec.retries = args.retries;
        spec.validate()?;
        specs.push(spec);
    }
    let rows = with_pool(args.jobs, || {
        specs
            .par_iter()
            .map(|spec| {
                let probe = EpProbe {
                    n: args.n,
                    rho: spec.rho0,
                    lambda: args.lambda,
                    kind: kind_of(args.correlated_k),
                    mode: args.mode,
                    config,
                };
                let outcome = bisect_transition(spec, &probe)?;
                Ok(TransitionRow {
                    rho: spec.rho0,
                    alpha_l0: l0_line(spec.rho0)?,
                    alpha_l1: l1_line(spec.rho0, 0.0)?,
                    alpha_ep: outcome.alpha_star,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let snap = serde_json::json!({ "args": snapshot(args), "ep": snapshot(&config) });
    let manifest = clock.manifest("bisect", snap, args.seed, vec![file_name(&args.out)]);
    write_csv_with_manifest(&args.out, &transition_csv(&rows), &manifest)
}

fn ep_row(
    base: &CompareRow,
    solver: &str,
    outcome: Result<EpResult>,
    truth: &DVector<f64>,
    ms: f64,
) -> CompareRow {
    let (converged, sweeps, err) = match outcome {
        Ok(r) => (
            r.converged,
            r.sweeps_used,
            mse(truth, &r.mean).unwrap_or(f64::NAN),
        ),
        Err(_) => (false, 0, f64::NAN),
    };
    CompareRow {
        solver: solver.to_owned(),
        converged,
        sweeps,
        mse: err,
        wall_ms: ms,
        ..base.clone()
    }
}

fn compare_trial(
    args: &CompareArgs,
    prior: PriorParams,
    config: &EpConfig,
    alpha: f64,
    ai: usize,
    trial: usize,
    clock: &Clock,
) -> Vec<CompareRow> {
    let seed = derive_seed(args.seed, &[ai as u64, trial as u64]);
    let base = CompareRow {
        rho: args.rho,
        alpha,
        n: args.n,
        k: args.correlated_k,
        trial,
        seed,
        solver: String::new(),
        converged: false,
        sweeps: 0,
        mse: f64::NAN,
        wall_ms: 0.0,
    };
    let mut spec =
        ProblemSpec::iid(args.n, args.rho, alpha).with_kind(kind_of(Some(args.correlated_k)));
    spec.lambda = args.lambda;
    let problem = match spec.generate(seed) {
        Ok(p) => p,
        Err(_) => {
            return ["ep-finite-t", "ep-zero-t", "omp"]
                .iter()
                .map(|s| CompareRow {
                    solver: (*s).to_owned(),
                    ..base.clone()
                })
                .collect()
        }
    };
    let truth = &problem
        .truth
        .as_ref()
        .expect("generated problems carry their truth")
        .values;
    let mut rows = Vec::with_capacity(3);
    for mode in [EpMode::FiniteT, EpMode::ZeroT] {
        let start = Instant::now();
        let outcome = mode.run(&problem, prior, config);
        let ms = clock.elapsed_ms(start);
        rows.push(ep_row(&base, &format!("ep-{mode}"), outcome, truth, ms));
    }
    let start = Instant::now();
    let budget = support_size(args.n, args.rho).min(problem.m());
    let omp = omp_reconstruct(
        &problem,
        &OmpConfig {
            max_atoms: Some(budget),
            ..OmpConfig::default()
        },
    );
    let ms = clock.elapsed_ms(start);
    rows.push(match omp {
        Ok(o) => {
            let last = o.residual_norms.last().copied().unwrap_or(0.0);
            let first = o.residual_norms.first().copied().unwrap_or(0.0);
            CompareRow {
                solver: "omp".to_owned(),
                converged: last <= OmpConfig::default().residual_tol * first,
                sweeps: o.support.len(),
                mse: mse(truth, &o.estimate).unwrap_or(f64::NAN),
                wall_ms: ms,
                ..base.clone()
            }
        }
        Err(_) => CompareRow {
            solver: "omp".to_owned(),
            wall_ms: ms,
            ..base.clone()
        },
    });
    rows
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let clock = Clock::new(args.common.no_timing);
    let config = args.ep.config();
    config.validate()?;
    let prior = PriorParams::new(args.rho, args.lambda)?;
    if args.trials == 0 || args.alpha_grid.is_empty() {
        return Err(Error::param("need at least one trial and one alpha value"));
    }
    if args.alpha_grid.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::param("alpha values must lie in (0, 1]"));
    }
    let jobs: Vec<(usize, f64, usize)> = args
        .alpha_grid
        .iter()
        .enumerate()
        .flat_map(|(ai, &a)| (0..args.trials).map(move |t| (ai, a, t)))
        .collect();
    let rows: Vec<CompareRow> = with_pool(args.jobs, || {
        jobs.par_iter()
            .flat_map_iter(|&(ai, a, t)| compare_trial(args, prior, &config, a, ai, t, &clock))
            .collect()
    })?;
    let snap = serde_json::json!({ "args": snapshot(args), "ep": snapshot(&config) });
    let manifest = clock.manifest("compare", snap, args.seed, vec![file_name(&args.out)]);
    write_csv_with_manifest(&args.out, &compare_csv(&rows), &manifest)
}

/// Translates a config object into `--key=value` tokens.
fn config_tokens(path: &Path) -> Result<Vec<OsString>> {
    let value: Value = io::read_json(path)?;
    let Value::Object(map) = value else {
        return Err(Error::format(path, "config must be a JSON object"));
    };
    let mut tokens = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            continue;
        }
        let scalar = |v: &Value| match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            other => Err(Error::format(
                path,
                format!("unsupported value for {key}: {other}"),
            )),
        };
        match &v {
            Value::Null => {}
            Value::Bool(true) => tokens.push(flag.into()),
            Value::Bool(false) => {}
            Value::Array(items) => {
                let joined = items
                    .iter()
                    .map(scalar)
                    .collect::<Result<Vec<_>>>()?
                    .join(",");
                tokens.push(format!("{flag}={joined}").into());
            }
            other => tokens.push(format!("{flag}={}", scalar(other)?).into()),
        }
    }
    Ok(tokens)
}

fn parse(args: Vec<OsString>) -> std::result::Result<Cli, clap::Error> {
    Cli::try_parse_from(args)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Phase(a) => cmd_phase(a),
        Command::Bisect(a) => cmd_bisect(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn clap_exit(e: clap::Error) -> i32 {
    let _ = e.print();
    if e.use_stderr() {
        1
    } else {
        0
    }
}

/// Value of `--config` in the subcommand's arguments, found before clap
/// parsing so the file can supply required flags.
fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut rest = argv.iter().skip(2);
    while let Some(arg) = rest.next() {
        let text = arg.to_string_lossy();
        if text == "--" {
            break;
        }
        if text == "--config" {
            return rest.next().map(PathBuf::from);
        }
        if let Some(v) = text.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let mut argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    if let Some(path) = config_path(&argv) {
        let tokens = match config_tokens(&path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {e}");
                return e.exit_code();
            }
        };
        // Right after the subcommand, so explicit flags come later and win.
        argv.splice(2..2, tokens);
    }
    let cli = match parse(argv) {
        Ok(c) => c,
        Err(e) => return clap_exit(e),
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
