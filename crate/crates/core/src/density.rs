//! EP free energy and learning of the prior density.
//!
//! `F_EP = (N-1) log Z_Q - Σ_n log Z_{Q⁽ⁿ⁾}`. Writing the cavity of site `n`
//! in natural form `exp(-½ π'_n w² + ν'_n w)`, every tilted normalizer
//! factors as `Z_{Q⁽ⁿ⁾} = Z_Q · ∫cav·ψ / ∫cav·φ_n`, so
//! `F_EP = -log Z_Q - Σ_n log(∫cav·ψ / ∫cav·φ_n)`. The natural form stays
//! finite when a cavity has zero precision (a variable the measurements do
//! not touch), where the mean/variance form would divide by zero.
//!
//! Only the tilted terms depend on ρ:
//! `∂F_EP/∂ρ = Σ_n (1 - G_n) / ((1-ρ) + ρ G_n)` with
//! `G_n = ∫cav·N(0,λ) / ∫cav·δ`, and the second derivative is the sum of the
//! squared terms, so `F_EP` is convex in ρ.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::ep::{EpState, FiniteTemperature};
use crate::error::{Error, Result};
use crate::prior::{ln_add_exp, CavityMarginal, PriorParams};

/// Learned densities are kept inside `[RHO_MIN, 1 - RHO_MIN]`.
pub const RHO_MIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FreeEnergyTerms {
    pub log_zq: f64,
    pub log_zqn: DVector<f64>,
    pub f_ep: f64,
}

/// Cavity in natural parameters: precision `π'` and linear coefficient `ν'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalCavity {
    pub precision: f64,
    pub shift: f64,
}

impl NaturalCavity {
    pub fn from_marginal(sigma_nn: f64, wbar_n: f64, a_n: f64, d_n: f64) -> Self {
        NaturalCavity {
            precision: 1.0 / sigma_nn - 1.0 / d_n,
            shift: wbar_n / sigma_nn - a_n / d_n,
        }
    }

    /// `log ∫ exp(-½ π' w² + ν' w) N(w; mean, var) dw`, or `None` when the
    /// integral diverges.
    pub fn ln_overlap(&self, mean: f64, var: f64) -> Option<f64> {
        let scaled = 1.0 + var * self.precision;
        if !(scaled > 0.0) {
            return None;
        }
        // (ν' + m/v)² / (2(π' + 1/v)) - m²/(2v), rearranged to avoid 1/v.
        let num = self.shift * var + mean;
        Some(-0.5 * scaled.ln() + num * num / (2.0 * var * scaled) - mean * mean / (2.0 * var))
    }

    /// `log G`: slab integral relative to the spike integral.
    pub fn ln_slab_gain(&self, lambda: f64) -> Option<f64> {
        self.ln_overlap(0.0, lambda)
    }
}

/// `log G` for a proper cavity `N(m, s)`: `log[N(0; m, λ+s) / N(0; m, s)]`.
pub fn log_slab_gain(cavity: CavityMarginal, lambda: f64) -> f64 {
    let s = cavity.variance;
    let m = cavity.mean;
    0.5 * (s / (s + lambda)).ln() + lambda * m * m / (2.0 * s * (s + lambda))
}

fn rho_term(ln_gain: f64, rho: f64) -> f64 {
    if ln_gain > 0.0 {
        let e = (-ln_gain).exp();
        (e - 1.0) / ((1.0 - rho) * e + rho)
    } else {
        let g = ln_gain.exp();
        (1.0 - g) / ((1.0 - rho) + rho * g)
    }
}

/// First and second derivatives of `F_EP` with respect to ρ, given each
/// site's `log G`.
pub fn rho_derivatives(ln_gains: &[f64], rho: f64) -> (f64, f64) {
    ln_gains.iter().fold((0.0, 0.0), |(g, h), &lg| {
        let t = rho_term(lg, rho);
        (g + t, h + t * t)
    })
}

/// One gradient-descent step, clamped to `[RHO_MIN, 1 - RHO_MIN]`.
pub fn rho_step(rho: f64, grad: f64, eta: f64) -> f64 {
    (rho - eta * grad).clamp(RHO_MIN, 1.0 - RHO_MIN)
}

/// Minimizes the convex `F_EP(ρ)` at fixed cavities by safeguarded Newton.
pub fn rho_newton(ln_gains: &[f64], rho: f64) -> f64 {
    let (mut lo, mut hi) = (RHO_MIN, 1.0 - RHO_MIN);
    if rho_derivatives(ln_gains, lo).0 >= 0.0 {
        return lo;
    }
    if rho_derivatives(ln_gains, hi).0 <= 0.0 {
        return hi;
    }
    let mut x = rho.clamp(lo, hi);
    for _ in 0..200 {
        let (g, h) = rho_derivatives(ln_gains, x);
        if g > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = if h > 0.0 { x - g / h } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() < 1e-15 {
            return next;
        }
        x = next;
    }
    x
}

fn state_cavities(state: &EpState) -> Result<Vec<NaturalCavity>> {
    let n = state.a.len();
    if state.d.len() != n || state.sigma_diag.len() != n || state.wbar.len() != n {
        return Err(Error::param("EP state vectors have inconsistent lengths"));
    }
    Ok((0..n)
        .map(|i| {
            NaturalCavity::from_marginal(state.sigma_diag[i], state.wbar[i], state.a[i], state.d[i])
        })
        .collect())
}

fn state_ln_gains(state: &EpState, prior: PriorParams) -> Result<Vec<f64>> {
    prior.validate()?;
    state_cavities(state)?
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.ln_slab_gain(prior.lambda).ok_or_else(|| {
                Error::numerical(format!("slab integral diverges for the cavity of site {i}"))
            })
        })
        .collect()
}

/// `∂F_EP/∂ρ` at the state's cavities.
pub fn dfep_drho(state: &EpState, prior: PriorParams) -> Result<f64> {
    Ok(rho_derivatives(&state_ln_gains(state, prior)?, prior.rho).0)
}

/// `∂²F_EP/∂ρ²` at the state's cavities.
pub fn d2fep_drho2(state: &EpState, prior: PriorParams) -> Result<f64> {
    Ok(rho_derivatives(&state_ln_gains(state, prior)?, prior.rho).1)
}

/// EP free energy of the finite-temperature approximation with site
/// parameters `state.a`, `state.d` (the posterior is recomputed from them).
///
/// `log Z_Q` includes the likelihood normalization `(β/2π)^{M/2}` and the
/// normalized Gaussian sites.
pub fn ep_free_energy(
    state: &EpState,
    prior: PriorParams,
    beta: f64,
    f: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<FreeEnergyTerms> {
    prior.validate()?;
    let (m, n) = f.shape();
    let (a, d) = (&state.a, &state.d);
    if a.len() != n || d.len() != n {
        return Err(Error::param(format!(
            "site vectors have lengths {}/{}, expected {n}",
            a.len(),
            d.len()
        )));
    }
    let model = FiniteTemperature::new(f, y, beta)?;
    let sol = model.solve(a, d)?;
    let b = model.linear_term(a, d);
    let wbar = &sol.mean;
    let ln_det_precision = sol.ln_det;
    let sigma = &sol.var;

    let sites: f64 = (0..n)
        .map(|i| 0.5 * (2.0 * PI * d[i]).ln() + a[i] * a[i] / (2.0 * d[i]))
        .sum();
    let log_zq = 0.5 * m as f64 * (beta / (2.0 * PI)).ln() - 0.5 * beta * y.norm_squared() - sites
        + 0.5 * n as f64 * (2.0 * PI).ln()
        - 0.5 * ln_det_precision
        + 0.5 * b.dot(wbar);

    let ln_spike = (1.0 - prior.rho).ln();
    let ln_slab = prior.rho.ln();
    let mut ratios = DVector::zeros(n);
    for i in 0..n {
        let cav = NaturalCavity::from_marginal(sigma[i], wbar[i], a[i], d[i]);
        let diverged = || Error::numerical(format!("cavity integral diverges at site {i}"));
        let gain = cav.ln_slab_gain(prior.lambda).ok_or_else(diverged)?;
        let site = cav.ln_overlap(a[i], d[i]).ok_or_else(diverged)?;
        ratios[i] = ln_add_exp(ln_spike, ln_slab + gain) - site;
    }
    let log_zqn = ratios.add_scalar(log_zq);
    Ok(FreeEnergyTerms {
        log_zq,
        log_zqn,
        f_ep: -log_zq - ratios.sum(),
    })
}
