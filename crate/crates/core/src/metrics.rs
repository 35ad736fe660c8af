//! Reconstruction quality measures.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ep::EpResult;
use crate::error::{Error, Result};
use crate::problem::SparseSignal;

fn check_lengths(w: &DVector<f64>, w_hat: &DVector<f64>) -> Result<()> {
    if w.len() != w_hat.len() {
        return Err(Error::param(format!(
            "vectors have different lengths {} and {}",
            w.len(),
            w_hat.len()
        )));
    }
    Ok(())
}

/// Sample Pearson correlation between the truth and the estimate.
pub fn pearson_r(w: &DVector<f64>, w_hat: &DVector<f64>) -> Result<f64> {
    check_lengths(w, w_hat)?;
    if w.len() < 2 {
        return Err(Error::param("correlation needs at least two entries"));
    }
    let (mw, mh) = (w.mean(), w_hat.mean());
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in w.iter().zip(w_hat.iter()) {
        let (dx, dy) = (x - mw, y - mh);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::numerical(
            "correlation undefined for a constant vector",
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mse(w: &DVector<f64>, w_hat: &DVector<f64>) -> Result<f64> {
    check_lengths(w, w_hat)?;
    if w.is_empty() {
        return Ok(0.0);
    }
    Ok((w - w_hat).norm_squared() / w.len() as f64)
}

/// MSE restricted to the true support (head) and to its complement (tail).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseSplit {
    pub head: f64,
    pub tail: f64,
    /// Share `K/N` of the support.
    pub head_weight: f64,
    /// Set when one part has no entries and was reported as 0.
    pub degenerate: bool,
}

impl MseSplit {
    /// `(K/N) head + ((N-K)/N) tail`, equal to the full MSE.
    pub fn combined(&self) -> f64 {
        self.head_weight * self.head + (1.0 - self.head_weight) * self.tail
    }

    /// Whether the support part carries more of the error than the rest.
    pub fn head_dominates(&self) -> bool {
        self.head_weight * self.head > (1.0 - self.head_weight) * self.tail
    }
}

pub fn mse_decomposition(w: &SparseSignal, w_hat: &DVector<f64>) -> Result<MseSplit> {
    check_lengths(&w.values, w_hat)?;
    let n = w.len();
    let mut on = vec![false; n];
    for &i in &w.support {
        on[i] = true;
    }
    let (mut head, mut tail) = (0.0, 0.0);
    for i in 0..n {
        let e = (w.values[i] - w_hat[i]).powi(2);
        if on[i] {
            head += e;
        } else {
            tail += e;
        }
    }
    let k = w.support.len();
    let rest = n - k;
    Ok(MseSplit {
        head: if k > 0 { head / k as f64 } else { 0.0 },
        tail: if rest > 0 { tail / rest as f64 } else { 0.0 },
        head_weight: if n > 0 { k as f64 / n as f64 } else { 0.0 },
        degenerate: k == 0 || rest == 0,
    })
}

/// Fraction of runs that converged; 0 for an empty list.
pub fn convergence_rate(results: &[EpResult]) -> f64 {
    rate(results.iter().map(|r| r.converged))
}

pub(crate) fn rate(flags: impl Iterator<Item = bool>) -> f64 {
    let (hits, total) = flags.fold((0usize, 0usize), |(h, t), f| (h + f as usize, t + 1));
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Sample mean and standard error `σ/√n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Some(Summary {
        mean,
        stderr,
        count: n,
    })
}

/// Per-run quality record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    /// `None` when the correlation is undefined (a constant vector).
    pub pearson_r: Option<f64>,
    pub mse: f64,
    pub mse_head: f64,
    pub mse_tail: f64,
    pub converged: bool,
    pub sweeps: usize,
}

impl ReconReport {
    pub fn new(
        truth: &SparseSignal,
        w_hat: &DVector<f64>,
        converged: bool,
        sweeps: usize,
    ) -> Result<Self> {
        let split = mse_decomposition(truth, w_hat)?;
        Ok(ReconReport {
            pearson_r: pearson_r(&truth.values, w_hat).ok(),
            mse: mse(&truth.values, w_hat)?,
            mse_head: split.head,
            mse_tail: split.tail,
            converged,
            sweeps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn pearson_examples() {
        let w = v(&[1.0, 2.0, 3.0]);
        assert_relative_eq!(pearson_r(&w, &w).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(pearson_r(&w, &(-&w)).unwrap(), -1.0, epsilon = 1e-15);
        let r = pearson_r(&w, &v(&[1.0, 2.0, 4.0])).unwrap();
        assert_relative_eq!(r, 9.0 / 84f64.sqrt(), max_relative = 1e-14);
        assert!(pearson_r(&w, &v(&[2.0, 2.0, 2.0])).is_err());
    }

    #[test]
    fn mse_examples() {
        let z = DVector::zeros(5);
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        assert_eq!(mse(&z, &DVector::from_element(5, 1.0)).unwrap(), 1.0);
        assert!(mse(&z, &DVector::zeros(4)).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let truth = SparseSignal::from_values(v(&[0.0, 1.5, 0.0, -2.0]), 1.0);
        let s = mse_decomposition(&truth, &truth.values).unwrap();
        assert_eq!((s.head, s.tail), (0.0, 0.0));
        let s = mse_decomposition(&truth, &v(&[1.0, 1.5, 1.0, -2.0])).unwrap();
        assert_eq!((s.head, s.tail), (0.0, 1.0));
        assert!(!s.degenerate);
        let empty = SparseSignal::from_values(DVector::zeros(3), 1.0);
        let s = mse_decomposition(&empty, &v(&[1.0, 1.0, 1.0])).unwrap();
        assert!(s.degenerate);
        assert_eq!((s.head, s.tail), (0.0, 1.0));
    }

    #[test]
    fn summary_stats() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_relative_eq!(s.mean, 2.5);
        assert_relative_eq!(s.stderr, (5.0f64 / 3.0 / 4.0).sqrt(), max_relative = 1e-14);
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn rate_counts() {
        let flags = [
            true, true, false, true, false, true, true, false, true, true,
        ];
        assert_relative_eq!(rate(flags.into_iter()), 0.7);
        assert_eq!(rate(std::iter::empty()), 0.0);
    }
}
