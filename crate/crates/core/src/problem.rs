//! Synthetic compressed-sensing instances: sparse signals, i.i.d. and
//! correlated Gaussian sensing matrices, and (optionally noisy) measurements.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, Stream};

/// Smallest diagonal entry of the correlated-row covariance offset.
pub const MIN_DIAGONAL_OFFSET: f64 = 1e-6;

/// Relative tolerance of the full-row-rank check.
pub const RANK_TOLERANCE: f64 = 1e-10;

const MAX_REGENERATIONS: u64 = 16;

/// A K-sparse signal together with the parameters it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal {
    pub values: DVector<f64>,
    /// Sorted indices of the nonzero entries.
    pub support: Vec<usize>,
    pub rho_true: f64,
    pub lambda_true: f64,
}

impl SparseSignal {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Wraps an arbitrary vector, taking its nonzero pattern as the support.
    pub fn from_values(values: DVector<f64>, lambda_true: f64) -> Self {
        let support: Vec<usize> = (0..values.len()).filter(|&i| values[i] != 0.0).collect();
        let rho_true = if values.is_empty() {
            0.0
        } else {
            support.len() as f64 / values.len() as f64
        };
        SparseSignal {
            values,
            support,
            rho_true,
            lambda_true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatrixKind {
    Iid,
    Correlated(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    pub entries: DMatrix<f64>,
    pub kind: MatrixKind,
    /// Row covariance `S = YᵀY + Δ` for correlated matrices.
    pub row_covariance: Option<DMatrix<f64>>,
}

impl SensingMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    /// Wraps an explicit matrix (no rank check).
    pub fn from_entries(entries: DMatrix<f64>) -> Self {
        SensingMatrix {
            entries,
            kind: MatrixKind::Iid,
            row_covariance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingProblem {
    pub matrix: SensingMatrix,
    pub y: DVector<f64>,
    pub truth: Option<SparseSignal>,
    pub noise_variance: f64,
    pub seed: u64,
}

impl SensingProblem {
    pub fn m(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n(&self) -> usize {
        self.matrix.cols()
    }

    /// A noiseless problem built from an explicit matrix and measurement.
    pub fn from_parts(entries: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if entries.nrows() != y.len() {
            return Err(Error::param(format!(
                "matrix has {} rows but measurement has length {}",
                entries.nrows(),
                y.len()
            )));
        }
        Ok(SensingProblem {
            matrix: SensingMatrix::from_entries(entries),
            y,
            truth: None,
            noise_variance: 0.0,
            seed: 0,
        })
    }
}

/// Number of nonzero entries, `round(rho * n)`.
pub fn support_size(n: usize, rho: f64) -> usize {
    (rho * n as f64).round() as usize
}

/// Draws a signal with exactly `round(rho * n)` nonzero entries, placed
/// uniformly at random and drawn from `N(0, lambda)`.
pub fn gen_sparse_signal(n: usize, rho: f64, lambda: f64, seed: u64) -> Result<SparseSignal> {
    if n == 0 {
        return Err(Error::param("signal length must be positive"));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::param(format!("density {rho} outside (0, 1]")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!(
            "slab variance {lambda} must be positive"
        )));
    }
    let k = support_size(n, rho);
    if k == 0 {
        return Err(Error::param(format!(
            "round({rho} * {n}) = 0 leaves an all-zero signal"
        )));
    }

    let mut rng = stream_rng(seed, Stream::Signal);
    let mut support = rand::seq::index::sample(&mut rng, n, k).into_vec();
    support.sort_unstable();
    let slab = Normal::new(0.0, lambda.sqrt()).expect("validated slab variance");
    let mut values = DVector::zeros(n);
    for &i in &support {
        values[i] = slab.sample(&mut rng);
    }
    Ok(SparseSignal {
        values,
        support,
        rho_true: rho,
        lambda_true: lambda,
    })
}

fn standard_normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Row-major fill so the draw order does not depend on storage layout.
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = rng.sample(StandardNormal);
        }
    }
    out
}

/// Numerical rank from a column-pivoted QR, with entries below
/// `RANK_TOLERANCE * ‖F‖_F` treated as zero.
pub fn numerical_rank(entries: &DMatrix<f64>) -> usize {
    if entries.is_empty() {
        return 0;
    }
    let tol = RANK_TOLERANCE * entries.norm();
    let qr = entries.clone().col_piv_qr();
    let r = qr.r();
    (0..r.nrows().min(r.ncols()))
        .filter(|&i| r[(i, i)].abs() > tol)
        .count()
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(Error::param("matrix dimensions must be positive"));
    }
    if m > n {
        return Err(Error::param(format!(
            "generator requires M <= N (got M={m}, N={n})"
        )));
    }
    Ok(())
}

fn full_rank_rows<F>(m: usize, seed: u64, mut draw: F) -> Result<DMatrix<f64>>
where
    F: FnMut(u64) -> DMatrix<f64>,
{
    for attempt in 0..MAX_REGENERATIONS {
        let attempt_seed = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, &[attempt])
        };
        let entries = draw(attempt_seed);
        if numerical_rank(&entries) == m {
            return Ok(entries);
        }
    }
    Err(Error::numerical(format!(
        "no full-rank matrix after {MAX_REGENERATIONS} regenerations"
    )))
}

/// An `m × n` matrix of i.i.d. standard normal entries with full row rank.
pub fn gen_iid_matrix(m: usize, n: usize, seed: u64) -> Result<SensingMatrix> {
    check_dims(m, n)?;
    let entries = full_rank_rows(m, seed, |s| {
        standard_normal_matrix(m, n, &mut stream_rng(s, Stream::Matrix))
    })?;
    Ok(SensingMatrix {
        entries,
        kind: MatrixKind::Iid,
        row_covariance: None,
    })
}

/// Builds `S = YᵀY + Δ` with `Y` a `k × n` standard normal matrix and `Δ`
/// diagonal with half-normal entries floored at [`MIN_DIAGONAL_OFFSET`].
pub fn correlated_covariance(n: usize, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    if k > n {
        return Err(Error::param(format!("rank parameter k={k} exceeds N={n}")));
    }
    let mut rng = stream_rng(seed, Stream::Covariance);
    let y = standard_normal_matrix(k, n, &mut rng);
    let mut s = y.transpose() * &y;
    for i in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        s[(i, i)] += z.abs().max(MIN_DIAGONAL_OFFSET);
    }
    // YᵀY is symmetric in exact arithmetic but not necessarily bitwise.
    for i in 0..n {
        for j in 0..i {
            let v = s[(i, j)];
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// Samples rows from `N(0, S)` through the Cholesky factor of `S`.
#[derive(Debug, Clone)]
pub struct CorrelatedRowSampler {
    lower: DMatrix<f64>,
}

impl CorrelatedRowSampler {
    pub fn new(covariance: &DMatrix<f64>) -> Result<Self> {
        let chol = covariance.clone().cholesky().ok_or_else(|| {
            Error::numerical("row covariance is not positive definite (Cholesky failed)")
        })?;
        Ok(CorrelatedRowSampler { lower: chol.l() })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Draws `m` independent rows, returned as an `m × n` matrix.
    pub fn sample_rows<R: Rng>(&self, m: usize, rng: &mut R) -> DMatrix<f64> {
        let z = standard_normal_matrix(m, self.dim(), rng);
        z * self.lower.transpose()
    }
}

/// An `m × n` matrix whose rows are independent `N(0, YᵀY + Δ)` draws with a
/// rank-`k` correlated part.
pub fn gen_correlated_matrix(m: usize, n: usize, k: usize, seed: u64) -> Result<SensingMatrix> {
    check_dims(m, n)?;
    let covariance = correlated_covariance(n, k, seed)?;
    let sampler = CorrelatedRowSampler::new(&covariance)?;
    let entries = full_rank_rows(m, seed, |s| {
        sampler.sample_rows(m, &mut stream_rng(s, Stream::Matrix))
    })?;
    Ok(SensingMatrix {
        entries,
        kind: MatrixKind::Correlated(k),
        row_covariance: Some(covariance),
    })
}

/// Computes `y = F w + η` with `η ~ N(0, noise_variance I)`.
pub fn measure(
    matrix: &SensingMatrix,
    signal: &SparseSignal,
    noise_variance: f64,
    seed: u64,
) -> Result<SensingProblem> {
    if matrix.cols() != signal.len() {
        return Err(Error::param(format!(
            "matrix has {} columns but signal has length {}",
            matrix.cols(),
            signal.len()
        )));
    }
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::param(format!(
            "noise variance {noise_variance} must be nonnegative"
        )));
    }
    let mut y = &matrix.entries * &signal.values;
    if noise_variance > 0.0 {
        let noise = Normal::new(0.0, noise_variance.sqrt()).expect("validated noise variance");
        let mut rng = stream_rng(seed, Stream::Noise);
        for v in y.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(SensingProblem {
        matrix: matrix.clone(),
        y,
        truth: Some(signal.clone()),
        noise_variance,
        seed,
    })
}

/// Everything needed to regenerate a synthetic instance from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    pub m: usize,
    pub rho: f64,
    pub lambda: f64,
    pub kind: MatrixKind,
    pub noise_variance: f64,
}

impl ProblemSpec {
    /// A noiseless i.i.d. instance with `M = round(alpha N)`, `λ = 1`.
    pub fn iid(n: usize, rho: f64, alpha: f64) -> Self {
        ProblemSpec {
            n,
            m: ((alpha * n as f64).round() as usize).max(1),
            rho,
            lambda: 1.0,
            kind: MatrixKind::Iid,
            noise_variance: 0.0,
        }
    }

    pub fn with_kind(mut self, kind: MatrixKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn generate(&self, seed: u64) -> Result<SensingProblem> {
        let signal = gen_sparse_signal(self.n, self.rho, self.lambda, seed)?;
        let matrix = match self.kind {
            MatrixKind::Iid => gen_iid_matrix(self.m, self.n, seed)?,
            MatrixKind::Correlated(k) => gen_correlated_matrix(self.m, self.n, k, seed)?,
        };
        measure(&matrix, &signal, self.noise_variance, seed)
    }
}
