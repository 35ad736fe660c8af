//! Orthogonal Matching Pursuit, the greedy baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{support_size, SensingProblem};

/// Ratio of smallest to largest singular value below which an active set is
/// treated as singular.
const SINGULAR_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmpConfig {
    /// Atom budget; `None` means `M`.
    pub max_atoms: Option<usize>,
    /// Stop once `‖r‖ ≤ residual_tol · ‖y‖`.
    pub residual_tol: f64,
}

impl Default for OmpConfig {
    fn default() -> Self {
        OmpConfig {
            max_atoms: None,
            residual_tol: 1e-9,
        }
    }
}

impl OmpConfig {
    /// Budget of `round(ρN)` atoms.
    pub fn with_density(rho: f64, n: usize) -> Self {
        OmpConfig {
            max_atoms: Some(support_size(n, rho)),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    pub estimate: DVector<f64>,
    /// Selected columns in order of selection.
    pub support: Vec<usize>,
    /// `‖r‖` before the first selection and after every accepted refit.
    pub residual_norms: Vec<f64>,
}

struct Refit {
    coef: DVector<f64>,
    residual: DVector<f64>,
}

fn refit(columns: &DMatrix<f64>, active: &[usize], y: &DVector<f64>) -> Option<Refit> {
    let sub = columns.select_columns(active);
    let svd = sub.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > SINGULAR_RATIO * smax) {
        return None;
    }
    let coef = svd.solve(y, 0.0).ok()?;
    let residual = y - &sub * &coef;
    Some(Refit { coef, residual })
}

pub fn omp_reconstruct(problem: &SensingProblem, config: &OmpConfig) -> Result<OmpResult> {
    let f = &problem.matrix.entries;
    let (m, n) = f.shape();
    let max_atoms = config.max_atoms.unwrap_or(m);
    if max_atoms > m {
        return Err(Error::param(format!(
            "max_atoms {max_atoms} exceeds M = {m}"
        )));
    }
    if !(config.residual_tol > 0.0) {
        return Err(Error::param("residual_tol must be positive"));
    }
    let norms: Vec<f64> = f.column_iter().map(|c| c.norm()).collect();
    if let Some(j) = norms.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::param(format!(
            "column {j} of the sensing matrix is zero"
        )));
    }
    let mut columns = f.clone();
    for (j, mut c) in columns.column_iter_mut().enumerate() {
        c /= norms[j];
    }

    let y = &problem.y;
    let stop = config.residual_tol * y.norm();
    let mut residual = y.clone();
    let mut residual_norms = vec![residual.norm()];
    let mut active: Vec<usize> = Vec::new();
    let mut coef = DVector::zeros(0);
    let mut chosen = vec![false; n];

    while active.len() < max_atoms && residual.norm() > stop {
        let scores = columns.tr_mul(&residual);
        let best = (0..n)
            .filter(|&j| !chosen[j])
            .max_by(|&i, &j| scores[i].abs().total_cmp(&scores[j].abs()));
        let Some(best) = best else { break };
        active.push(best);
        match refit(&columns, &active, y) {
            Some(fit) => {
                chosen[best] = true;
                coef = fit.coef;
                residual = fit.residual;
                residual_norms.push(residual.norm());
            }
            None => {
                active.pop();
                break;
            }
        }
    }

    let mut estimate = DVector::zeros(n);
    for (slot, &j) in active.iter().enumerate() {
        estimate[j] = coef[slot] / norms[j];
    }
    Ok(OmpResult {
        estimate,
        support: active,
        residual_norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_scaled_column() {
        let f = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 3.0, 0.0, 2.0, 4.0]);
        let w = DVector::from_vec(vec![0.0, 0.0, 1.5]);
        let problem = SensingProblem::from_parts(f.clone(), &f * &w).unwrap();
        let out = omp_reconstruct(&problem, &OmpConfig::default()).unwrap();
        assert_eq!(out.support, vec![2]);
        assert!((out.estimate - w).amax() < 1e-14);
    }

    #[test]
    fn zero_column_is_rejected() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let problem = SensingProblem::from_parts(f, DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(omp_reconstruct(&problem, &OmpConfig::default()).is_err());
    }

    #[test]
    fn budget_above_m_is_rejected() {
        let f = DMatrix::identity(2, 3);
        let problem = SensingProblem::from_parts(f, DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let cfg = OmpConfig {
            max_atoms: Some(3),
            ..OmpConfig::default()
        };
        assert!(omp_reconstruct(&problem, &cfg).is_err());
    }

    #[test]
    fn singular_active_set_drops_the_atom() {
        // y is orthogonal to both (identical) columns, so the second pick
        // duplicates the first.
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let problem = SensingProblem::from_parts(f, DVector::from_vec(vec![0.0, 1.0])).unwrap();
        let out = omp_reconstruct(&problem, &OmpConfig::default()).unwrap();
        assert_eq!(out.support.len(), 1);
        assert_eq!(out.residual_norms.len(), 2);
        assert!(out.estimate.iter().all(|v| v.is_finite()));
    }
}
