//! Spike-and-slab prior and the closed-form moments of its tilted marginal.
//!
//! The prior is `ψ(w) = (1-ρ) δ(w) + ρ N(w; 0, λ)`. Multiplying it by a
//! Gaussian cavity `N(w; m, v)` gives a two-component mixture whose weights
//! are `(1-ρ) N(0; m, v)` and `ρ N(0; m, λ+v)`. Both weights are carried in
//! log space, since `exp(-m²/2v)` underflows for confident cavities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cavity variances below this are raised to it before evaluation.
pub const MIN_CAVITY_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    /// Density: prior probability that an entry is nonzero.
    pub rho: f64,
    /// Slab variance.
    pub lambda: f64,
}

impl PriorParams {
    pub fn new(rho: f64, lambda: f64) -> Result<Self> {
        let p = PriorParams { rho, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::param(format!("density {} outside [0, 1]", self.rho)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!(
                "slab variance {} must be positive",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Gaussian cavity marginal `N(mean, variance)` of one variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityMarginal {
    pub mean: f64,
    pub variance: f64,
}

/// Normalizer and first two moments of one tilted marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedMoments {
    /// `log ∫ N(w; m, v) ψ(w) dw`.
    pub log_z: f64,
    pub m1: f64,
    pub m2: f64,
    /// `m2 - m1²`, evaluated without cancellation.
    pub var: f64,
}

impl TiltedMoments {
    /// A point mass or Gaussian with the given mean and variance.
    pub fn from_mean_var(mean: f64, var: f64) -> Self {
        TiltedMoments {
            log_z: 0.0,
            m1: mean,
            m2: var + mean * mean,
            var,
        }
    }
}

pub(crate) fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - d * d / (2.0 * var)
}

/// `log(exp(a) + exp(b))`, exact when either side is `-inf`.
pub(crate) fn ln_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    let lo = a.min(b);
    hi + (lo - hi).exp().ln_1p()
}

/// Closed-form normalizer and moments of `N(w; cavity) ψ(w)`.
pub fn tilted_moments(cavity: CavityMarginal, prior: PriorParams) -> Result<TiltedMoments> {
    if !(cavity.variance > 0.0) {
        return Err(Error::param(format!(
            "cavity variance {} must be positive",
            cavity.variance
        )));
    }
    let v = cavity.variance.max(MIN_CAVITY_VARIANCE);
    let m = cavity.mean;
    let lambda = prior.lambda;

    let ln_spike = (1.0 - prior.rho).ln() + ln_normal_pdf(0.0, m, v);
    let ln_slab = prior.rho.ln() + ln_normal_pdf(0.0, m, lambda + v);
    let log_z = ln_add_exp(ln_spike, ln_slab);
    if prior.rho == 0.0 {
        return Ok(TiltedMoments {
            log_z,
            m1: 0.0,
            m2: 0.0,
            var: 0.0,
        });
    }

    // Posterior probability of the slab component and the slab's own moments.
    let slab_weight = (ln_slab - log_z).exp();
    let slab_mean = lambda * m / (lambda + v);
    let slab_var = lambda * v / (lambda + v);
    let m1 = slab_weight * slab_mean;
    let m2 = slab_weight * (slab_var + slab_mean * slab_mean);
    let var = slab_weight * slab_var + slab_weight * (1.0 - slab_weight) * slab_mean * slab_mean;
    Ok(TiltedMoments { log_z, m1, m2, var })
}

/// The two parts of the prior at `w`: the point-mass weight (nonzero only at
/// `w = 0`) and the slab density `ρ N(w; 0, λ)`.
pub fn prior_density_pointwise(w: f64, prior: PriorParams) -> (f64, f64) {
    let spike_weight = if w == 0.0 { 1.0 - prior.rho } else { 0.0 };
    let slab_density = prior.rho * ln_normal_pdf(w, 0.0, prior.lambda).exp();
    (spike_weight, slab_density)
}
