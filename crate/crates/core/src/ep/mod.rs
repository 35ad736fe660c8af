//! Expectation Propagation with a spike-and-slab prior.
//!
//! Every prior factor `ψ(w_n)` is replaced by a Gaussian site `N(w_n; a_n, d_n)`.
//! One sweep factorizes the Gaussian posterior once, then updates every site
//! against that same posterior: cavity → tilted moments → moment matching.
//! Site updates inside a sweep never observe each other's new values.
//!
//! Two posterior back ends share the sweep loop:
//! [`finite`] keeps the measurement as a Gaussian likelihood with inverse
//! temperature β; [`zero_t`] imposes `y = F w` exactly through a row-echelon
//! split and only factorizes an `(N-M) × (N-M)` matrix.

mod factor;
pub mod finite;
pub mod site;
pub mod zero_t;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::density;
use crate::error::{Error, Result};
use crate::prior::{tilted_moments, PriorParams, TiltedMoments};
use crate::problem::SensingProblem;

pub use finite::{posterior_params, FiniteTemperature};
pub use site::{
    cavity_params, moment_match_site, site_times_cavity, sweep_error, Cavity, SiteControls,
    SiteParams,
};
pub use zero_t::{
    row_echelon, run_ep_zero_t, zero_t_posterior, EchelonSystem, SplitState, ZeroTemperature,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpConfig {
    /// Inverse temperature of the measurement likelihood.
    pub beta: f64,
    pub max_sweeps: usize,
    /// Convergence threshold on the sweep error.
    pub tol: f64,
    pub damping: f64,
    pub d_min: f64,
    pub d_max: f64,
    /// Learn the prior density by descending the EP free energy.
    pub learn_rho: bool,
    /// Learning rate of the density update.
    pub eta: f64,
    /// Replace the gradient step by an exact 1-D Newton solve each sweep.
    pub rho_newton: bool,
}

impl Default for EpConfig {
    fn default() -> Self {
        EpConfig {
            beta: 1e9,
            max_sweeps: 2000,
            tol: 1e-6,
            damping: 0.0,
            d_min: 1e-11,
            d_max: 1e11,
            learn_rho: false,
            eta: 5e-4,
            rho_newton: false,
        }
    }
}

impl EpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::param(format!("beta {} must be positive", self.beta)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::param("max_sweeps must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param(format!("tol {} must be positive", self.tol)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::param(format!(
                "damping {} outside [0, 1)",
                self.damping
            )));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return Err(Error::param(format!(
                "site variance bounds [{}, {}] are invalid",
                self.d_min, self.d_max
            )));
        }
        if self.learn_rho && !(self.eta > 0.0) {
            return Err(Error::param(format!(
                "learning rate {} must be positive",
                self.eta
            )));
        }
        Ok(())
    }

    pub fn controls(&self) -> SiteControls {
        SiteControls {
            d_min: self.d_min,
            d_max: self.d_max,
            damping: self.damping,
        }
    }
}

/// Site parameters and the matching posterior marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct EpState {
    pub a: DVector<f64>,
    pub d: DVector<f64>,
    /// Diagonal of the posterior covariance Σ.
    pub sigma_diag: DVector<f64>,
    pub wbar: DVector<f64>,
    pub sweep: usize,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpResult {
    /// Tilted means, the reconstruction estimate.
    pub mean: DVector<f64>,
    /// Tilted variances.
    pub variance: DVector<f64>,
    pub converged: bool,
    pub sweeps_used: usize,
    pub final_eps: f64,
    pub rho_learned: Option<f64>,
    /// Site updates skipped for improper cavities or degenerate tilted moments.
    pub skipped_updates: usize,
    /// Size of the matrix factorized in each sweep.
    pub factor_dim: usize,
    pub state: EpState,
}

/// Posterior marginals of the Gaussian approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

/// A Gaussian posterior whose marginals can be recomputed from site parameters.
pub trait GaussianPosterior {
    fn dim(&self) -> usize;

    /// Side length of the matrix factorized by [`GaussianPosterior::marginals`].
    fn factor_dim(&self) -> usize;

    fn marginals(&self, a: &DVector<f64>, d: &DVector<f64>) -> Result<Marginals>;
}

/// Which posterior back end to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpMode {
    #[default]
    FiniteT,
    ZeroT,
}

impl EpMode {
    pub fn run(
        self,
        problem: &SensingProblem,
        prior: PriorParams,
        config: &EpConfig,
    ) -> Result<EpResult> {
        match self {
            EpMode::FiniteT => run_ep(problem, prior, config),
            EpMode::ZeroT => run_ep_zero_t(problem, prior, config),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EpMode::FiniteT => "finite-t",
            EpMode::ZeroT => "zero-t",
        }
    }
}

impl std::fmt::Display for EpMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EpMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "finite-t" => Ok(EpMode::FiniteT),
            "zero-t" => Ok(EpMode::ZeroT),
            other => Err(format!(
                "unknown mode '{other}' (expected finite-t or zero-t)"
            )),
        }
    }
}

/// Finite-temperature EP on `problem`.
pub fn run_ep(problem: &SensingProblem, prior: PriorParams, config: &EpConfig) -> Result<EpResult> {
    config.validate()?;
    let model = FiniteTemperature::new(&problem.matrix.entries, &problem.y, config.beta)?;
    run_sweeps(&model, prior, config)
}

/// The sweep loop shared by both posterior back ends.
pub fn run_sweeps<P: GaussianPosterior>(
    model: &P,
    prior: PriorParams,
    config: &EpConfig,
) -> Result<EpResult> {
    config.validate()?;
    prior.validate()?;
    let n = model.dim();
    let controls = config.controls();
    let lambda = prior.lambda;

    let mut rho = prior.rho;
    if config.learn_rho {
        rho = rho.clamp(density::RHO_MIN, 1.0 - density::RHO_MIN);
    }
    let mut a = DVector::zeros(n);
    let mut d = DVector::from_element(n, lambda.clamp(config.d_min, config.d_max));

    let mut tilted = vec![TiltedMoments::from_mean_var(0.0, 0.0); n];
    let mut prev: Option<Vec<TiltedMoments>> = None;
    let mut eps = f64::INFINITY;
    let mut converged = false;
    let mut sweeps = 0;
    let mut skipped = 0;
    let mut log_gains = Vec::with_capacity(n);

    while sweeps < config.max_sweeps {
        sweeps += 1;
        let marg = model.marginals(&a, &d)?;
        let current = PriorParams { rho, lambda };
        let mut next_a = a.clone();
        let mut next_d = d.clone();
        log_gains.clear();

        for i in 0..n {
            match cavity_params(marg.var[i], marg.mean[i], a[i], d[i]) {
                Cavity::Proper(cavity) => {
                    let t = tilted_moments(cavity, current)?;
                    tilted[i] = t;
                    if config.learn_rho {
                        log_gains.push(density::log_slab_gain(cavity, lambda));
                    }
                    let old = SiteParams { a: a[i], d: d[i] };
                    match moment_match_site(t, cavity) {
                        Some(raw) => {
                            let s = raw.settle(old, &controls);
                            next_a[i] = s.a;
                            next_d[i] = s.d;
                        }
                        None => skipped += 1,
                    }
                }
                Cavity::Improper { .. } => {
                    tilted[i] = TiltedMoments::from_mean_var(marg.mean[i], marg.var[i].max(0.0));
                    skipped += 1;
                }
            }
        }

        eps = prev
            .as_deref()
            .map_or(f64::INFINITY, |p| sweep_error(&tilted, p));
        if !eps.is_finite() && prev.is_some() {
            return Err(Error::numerical(format!(
                "sweep error became {eps} at sweep {sweeps}"
            )));
        }

        let mut rho_change = 0.0;
        if config.learn_rho {
            let next_rho = if config.rho_newton {
                density::rho_newton(&log_gains, rho)
            } else {
                let (grad, _) = density::rho_derivatives(&log_gains, rho);
                density::rho_step(rho, grad, config.eta)
            };
            rho_change = (next_rho - rho).abs();
            rho = next_rho;
        }

        a = next_a;
        d = next_d;
        prev = Some(tilted.clone());
        if eps < config.tol && rho_change < config.tol {
            converged = true;
            break;
        }
    }

    let marg = model.marginals(&a, &d)?;
    let mean = DVector::from_iterator(n, tilted.iter().map(|t| t.m1));
    let variance = DVector::from_iterator(n, tilted.iter().map(|t| t.var.max(0.0)));
    Ok(EpResult {
        mean,
        variance,
        converged,
        sweeps_used: sweeps,
        final_eps: eps,
        rho_learned: config.learn_rho.then_some(rho),
        skipped_updates: skipped,
        factor_dim: model.factor_dim(),
        state: EpState {
            a,
            d,
            sigma_diag: marg.var,
            wbar: marg.mean,
            sweep: sweeps,
            eps,
        },
    })
}
