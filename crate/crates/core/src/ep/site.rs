//! Per-variable EP operations: cavity extraction, moment matching and the
//! sweep convergence error.

use crate::prior::{CavityMarginal, TiltedMoments};

/// Outcome of removing one site from the Gaussian posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cavity {
    Proper(CavityMarginal),
    /// The cavity variance came out nonpositive (or infinite); the site is
    /// left untouched for this sweep.
    Improper {
        variance: f64,
    },
}

impl Cavity {
    pub fn proper(self) -> Option<CavityMarginal> {
        match self {
            Cavity::Proper(c) => Some(c),
            Cavity::Improper { .. } => None,
        }
    }
}

/// Cavity mean and variance of variable `n` from the posterior marginal
/// `(wbar_n, sigma_nn)` and the site parameters `(a_n, d_n)`:
///
/// `Σ' = Σ_nn / (1 - Σ_nn/d_n)`, `w̄' = Σ' (w̄_n/Σ_nn - a_n/d_n)`.
pub fn cavity_params(sigma_nn: f64, wbar_n: f64, a_n: f64, d_n: f64) -> Cavity {
    let variance = sigma_nn / (1.0 - sigma_nn / d_n);
    if !(variance > 0.0 && variance.is_finite()) {
        return Cavity::Improper { variance };
    }
    let mean = variance * (wbar_n / sigma_nn - a_n / d_n);
    Cavity::Proper(CavityMarginal { mean, variance })
}

/// Mean and second moment of the Gaussian obtained by multiplying a cavity
/// with the site `N(a, d)`.
pub fn site_times_cavity(a: f64, d: f64, cavity: CavityMarginal) -> (f64, f64) {
    let var = 1.0 / (1.0 / d + 1.0 / cavity.variance);
    let mean = var * (a / d + cavity.mean / cavity.variance);
    (mean, var + mean * mean)
}

/// Site parameters `(a, d)` of one Gaussian prior factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteParams {
    pub a: f64,
    pub d: f64,
}

/// Bounds and damping applied to raw moment-matching output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteControls {
    pub d_min: f64,
    pub d_max: f64,
    /// Weight of the previous value, `new ← (1-γ) new + γ old`.
    pub damping: f64,
}

/// Raw site parameters that make the Gaussian posterior share the tilted
/// mean and variance. Returns `None` when the tilted variance is not
/// positive. `d` may come out negative or infinite; see [`SiteParams::settle`].
pub fn moment_match_site(tilted: TiltedMoments, cavity: CavityMarginal) -> Option<SiteParams> {
    let var = tilted.var;
    if !(var > 0.0) {
        return None;
    }
    let d = 1.0 / (1.0 / var - 1.0 / cavity.variance);
    let shift = tilted.m1 - cavity.mean;
    let a = if shift == 0.0 {
        tilted.m1
    } else {
        tilted.m1 + d / cavity.variance * shift
    };
    Some(SiteParams { a, d })
}

impl SiteParams {
    /// Clamps `d` into `[d_min, d_max]` and mixes with the previous values.
    ///
    /// The clamp acts on the precision `1/d`, so a negative raw variance
    /// (tilted wider than the cavity) becomes the flat `d_max` site.
    pub fn settle(self, old: SiteParams, controls: &SiteControls) -> SiteParams {
        let precision = (1.0 / self.d).clamp(1.0 / controls.d_max, 1.0 / controls.d_min);
        let d = 1.0 / precision;
        let a = if self.a.is_finite() { self.a } else { old.a };
        let g = controls.damping;
        if g == 0.0 {
            SiteParams { a, d }
        } else {
            SiteParams {
                a: (1.0 - g) * a + g * old.a,
                d: (1.0 - g) * d + g * old.d,
            }
        }
    }
}

/// `max_n (|Δm1_n| + |Δm2_n|)` between two sweeps.
pub fn sweep_error(now: &[TiltedMoments], prev: &[TiltedMoments]) -> f64 {
    assert_eq!(now.len(), prev.len(), "sweep_error needs equal lengths");
    now.iter()
        .zip(prev)
        .map(|(a, b)| (a.m1 - b.m1).abs() + (a.m2 - b.m2).abs())
        .fold(0.0, f64::max)
}
