//! Finite-temperature Gaussian posterior `Σ⁻¹ = βFᵀF + D`, `w̄ = Σ(βFᵀy + Da)`.

use nalgebra::{DMatrix, DVector};

use super::factor::{Observations, PrecisionFactor};
use super::{GaussianPosterior, Marginals};
use crate::error::{Error, Result};

/// Precomputed `βFᵀF` and `βFᵀy`, with `√β F`, `√β y` kept for the
/// square-root fallback.
#[derive(Debug, Clone)]
pub struct FiniteTemperature {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    f: DMatrix<f64>,
    y: DVector<f64>,
    beta: f64,
}

/// Posterior mean, marginal variances and `log det Σ⁻¹`.
#[derive(Debug, Clone)]
pub(crate) struct FiniteSolution {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    pub ln_det: f64,
}

impl From<PrecisionFactor> for FiniteSolution {
    fn from(fac: PrecisionFactor) -> Self {
        FiniteSolution {
            var: fac.variances(),
            ln_det: fac.ln_det(),
            mean: fac.mean,
        }
    }
}

fn check_sites(a: &DVector<f64>, d: &DVector<f64>, n: usize) -> Result<()> {
    if a.len() != n || d.len() != n {
        return Err(Error::param(format!(
            "site vectors have lengths {}/{}, expected {n}",
            a.len(),
            d.len()
        )));
    }
    if let Some(bad) = d.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::param(format!(
            "site variance {bad} must be positive"
        )));
    }
    Ok(())
}

impl FiniteTemperature {
    pub fn new(f: &DMatrix<f64>, y: &DVector<f64>, beta: f64) -> Result<Self> {
        if f.nrows() != y.len() {
            return Err(Error::param(format!(
                "matrix has {} rows but measurement has length {}",
                f.nrows(),
                y.len()
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::param(format!("beta {beta} must be positive")));
        }
        let ft = f.transpose();
        Ok(FiniteTemperature {
            gram: &ft * f * beta,
            rhs: ft * y * beta,
            f: f.clone(),
            y: y.clone(),
            beta,
        })
    }

    pub fn precision(&self, d: &DVector<f64>) -> DMatrix<f64> {
        let mut p = self.gram.clone();
        for (i, di) in d.iter().enumerate() {
            p[(i, i)] += 1.0 / di;
        }
        p
    }

    /// Natural mean `βFᵀy + Da`.
    pub fn linear_term(&self, a: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut b = self.rhs.clone();
        for i in 0..b.len() {
            b[i] += a[i] / d[i];
        }
        b
    }

    fn observations(&self) -> Observations {
        let root = self.beta.sqrt();
        Observations {
            rows: &self.f * root,
            rhs: &self.y * root,
        }
    }

    /// Cholesky or QR factor of the precision.
    pub(crate) fn factor(&self, a: &DVector<f64>, d: &DVector<f64>) -> Result<PrecisionFactor> {
        check_sites(a, d, self.rhs.len())?;
        PrecisionFactor::new(&self.gram, &self.linear_term(a, d), a, d, || {
            self.observations()
        })
    }

    /// Posterior marginals from the precision Cholesky, or from the QR
    /// square root when the Cholesky loses accuracy.
    pub(crate) fn solve(&self, a: &DVector<f64>, d: &DVector<f64>) -> Result<FiniteSolution> {
        check_sites(a, d, self.rhs.len())?;
        let linear = self.linear_term(a, d);
        let diag = match PrecisionFactor::cholesky(&self.gram, &linear, d) {
            Ok(fac) => return Ok(fac.into()),
            Err(diag) => diag,
        };
        PrecisionFactor::from_square_root(a, d, self.observations())
            .map(FiniteSolution::from)
            .map_err(|e| Error::numerical(format!("{e} (precision diagonal range {diag})")))
    }
}

impl GaussianPosterior for FiniteTemperature {
    fn dim(&self) -> usize {
        self.rhs.len()
    }

    fn factor_dim(&self) -> usize {
        self.rhs.len()
    }

    fn marginals(&self, a: &DVector<f64>, d: &DVector<f64>) -> Result<Marginals> {
        let sol = self.solve(a, d)?;
        if sol.var.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("posterior variances are not finite"));
        }
        Ok(Marginals {
            mean: sol.mean,
            var: sol.var,
        })
    }
}

/// Full posterior covariance and mean for site parameters `(a, d)`.
pub fn posterior_params(
    f: &DMatrix<f64>,
    y: &DVector<f64>,
    a: &DVector<f64>,
    d: &DVector<f64>,
    beta: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let fac = FiniteTemperature::new(f, y, beta)?.factor(a, d)?;
    Ok((fac.covariance(), fac.mean))
}
