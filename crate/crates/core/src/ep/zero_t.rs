//! Zero-temperature EP: the constraint `y = F w` is imposed exactly.
//!
//! Gauss-Jordan elimination brings `F` to `[I | G]` (up to a column
//! permutation), splitting `w` into `M` dependent variables and `N-M`
//! independent ones with `w_d = y' - G w_i`. The Gaussian posterior of `w_i`
//! has precision `D_i + Gᵀ D_d G`, so each sweep factorizes only an
//! `(N-M) × (N-M)` matrix.

use nalgebra::{DMatrix, DVector};

use super::factor::{Observations, PrecisionFactor};
use super::{run_sweeps, EpConfig, EpResult, GaussianPosterior, Marginals};
use crate::error::{Error, Result};
use crate::prior::PriorParams;
use crate::problem::SensingProblem;

/// Pivots smaller than this times `‖F‖_F` count as zero.
pub const ECHELON_TOLERANCE: f64 = 1e-10;

/// Relative tolerance for right-hand sides of rows found to be dependent.
const CONSISTENCY_TOLERANCE: f64 = 1e-8;

/// `F` in reduced row-echelon form `[I | G]` with its column permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct EchelonSystem {
    /// `rank × (N - rank)` block to the right of the identity.
    pub g: DMatrix<f64>,
    pub y_prime: DVector<f64>,
    /// `col_perm[j]` is the original index of echelon column `j`.
    pub col_perm: Vec<usize>,
    /// Linearly dependent (and consistent) rows removed during elimination.
    pub dropped_rows: usize,
}

impl EchelonSystem {
    pub fn rank(&self) -> usize {
        self.y_prime.len()
    }

    pub fn n(&self) -> usize {
        self.col_perm.len()
    }

    /// Echelon-ordered copy of a vector in original variable order.
    pub fn to_echelon_order(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.col_perm.iter().map(|&j| v[j]))
    }

    /// Inverse of [`EchelonSystem::to_echelon_order`].
    pub fn to_original_order(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for (pos, &j) in self.col_perm.iter().enumerate() {
            out[j] = v[pos];
        }
        out
    }
}

fn argmax_abs(
    m: &DMatrix<f64>,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> (usize, usize, f64) {
    let mut best = (rows.start, cols.start, -1.0);
    for j in cols {
        for i in rows.clone() {
            let v = m[(i, j)].abs();
            if v > best.2 {
                best = (i, j, v);
            }
        }
    }
    best
}

/// Gauss-Jordan elimination with partial row pivoting; a column is swapped
/// out only when it has no usable pivot left.
pub fn row_echelon(f: &DMatrix<f64>, y: &DVector<f64>) -> Result<EchelonSystem> {
    let (m, n) = f.shape();
    if y.len() != m {
        return Err(Error::param(format!(
            "matrix has {m} rows but measurement has length {}",
            y.len()
        )));
    }
    let tol = ECHELON_TOLERANCE * f.norm();
    let mut a = f.clone();
    let mut b = y.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rank = 0;

    while rank < m && rank < n {
        let r = rank;
        let (mut pi, _, pv) = argmax_abs(&a, r..m, r..r + 1);
        if pv <= tol {
            let (i, j, v) = argmax_abs(&a, r..m, r + 1..n);
            if v <= tol {
                break;
            }
            a.swap_columns(r, j);
            perm.swap(r, j);
            pi = i;
        }
        a.swap_rows(r, pi);
        b.swap_rows(r, pi);

        let inv = 1.0 / a[(r, r)];
        a.row_mut(r).scale_mut(inv);
        b[r] *= inv;
        a[(r, r)] = 1.0;
        let pivot_row = a.row(r).clone_owned();
        for i in (0..m).filter(|&i| i != r) {
            let factor = a[(i, r)];
            if factor != 0.0 {
                let mut row = a.row_mut(i);
                row -= &pivot_row * factor;
                b[i] -= factor * b[r];
                a[(i, r)] = 0.0;
            }
        }
        rank += 1;
    }

    let scale = CONSISTENCY_TOLERANCE * y.amax().max(1.0);
    for i in rank..m {
        if b[i].abs() > scale {
            return Err(Error::Infeasible(format!(
                "row {i} is linearly dependent but its measurement residual is {:e}",
                b[i]
            )));
        }
    }

    Ok(EchelonSystem {
        g: a.view((0, rank), (rank, n - rank)).clone_owned(),
        y_prime: b.rows(0, rank).clone_owned(),
        col_perm: perm,
        dropped_rows: m - rank,
    })
}

/// Posterior moments of the dependent/independent split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    pub a_d: DVector<f64>,
    pub d_d: DVector<f64>,
    pub a_i: DVector<f64>,
    pub d_i: DVector<f64>,
    pub sigma_i: DMatrix<f64>,
    pub wbar_i: DVector<f64>,
    pub wbar_d: DVector<f64>,
    /// Diagonal of `G Σ_i Gᵀ`.
    pub sigma_d_diag: DVector<f64>,
}

/// Zero-temperature posterior with the echelon system computed once.
#[derive(Debug, Clone)]
pub struct ZeroTemperature {
    ech: EchelonSystem,
}

struct SplitFactor {
    posterior: Option<PrecisionFactor>,
    wbar_i: DVector<f64>,
    wbar_d: DVector<f64>,
}

impl ZeroTemperature {
    pub fn new(f: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        Ok(ZeroTemperature {
            ech: row_echelon(f, y)?,
        })
    }

    pub fn echelon(&self) -> &EchelonSystem {
        &self.ech
    }

    fn split_sites(&self, a: &DVector<f64>, d: &DVector<f64>) -> Result<[DVector<f64>; 4]> {
        let n = self.ech.n();
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
        let r = self.ech.rank();
        let ap = self.ech.to_echelon_order(a);
        let dp = self.ech.to_echelon_order(d);
        Ok([
            ap.rows(0, r).clone_owned(),
            dp.rows(0, r).clone_owned(),
            ap.rows(r, n - r).clone_owned(),
            dp.rows(r, n - r).clone_owned(),
        ])
    }

    fn factor(&self, sites: &[DVector<f64>; 4]) -> Result<SplitFactor> {
        let [a_d, d_d, a_i, d_i] = sites;
        let g = &self.ech.g;
        let free = g.ncols();
        if free == 0 {
            return Ok(SplitFactor {
                posterior: None,
                wbar_i: DVector::zeros(0),
                wbar_d: self.ech.y_prime.clone(),
            });
        }

        // Sites on dependent variables observe G w_i = y' - w_d.
        let mut gs = g.clone();
        let mut zs = &self.ech.y_prime - a_d;
        for (r, dr) in d_d.iter().enumerate() {
            let s = 1.0 / dr.sqrt();
            gs.row_mut(r).scale_mut(s);
            zs[r] *= s;
        }
        let gram = gs.tr_mul(&gs);
        let mut b = gs.tr_mul(&zs);
        for j in 0..free {
            b[j] += a_i[j] / d_i[j];
        }
        let fac = PrecisionFactor::new(&gram, &b, a_i, d_i, || Observations { rows: gs, rhs: zs })
            .map_err(|e| Error::numerical(format!("independent block: {e}")))?;
        let wbar_i = fac.mean.clone();
        let wbar_d = &self.ech.y_prime - g * &wbar_i;
        Ok(SplitFactor {
            posterior: Some(fac),
            wbar_i,
            wbar_d,
        })
    }

    /// Full split posterior for site parameters in original variable order.
    pub fn split_state(&self, a: &DVector<f64>, d: &DVector<f64>) -> Result<SplitState> {
        let sites = self.split_sites(a, d)?;
        let fac = self.factor(&sites)?;
        let (sigma_i, sigma_d_diag) = match &fac.posterior {
            Some(fac) => (fac.covariance(), fac.quadratic_forms(&self.ech.g)),
            None => (DMatrix::zeros(0, 0), DVector::zeros(self.ech.rank())),
        };
        let [a_d, d_d, a_i, d_i] = sites;
        Ok(SplitState {
            a_d,
            d_d,
            a_i,
            d_i,
            sigma_i,
            wbar_i: fac.wbar_i,
            wbar_d: fac.wbar_d,
            sigma_d_diag,
        })
    }
}

impl GaussianPosterior for ZeroTemperature {
    fn dim(&self) -> usize {
        self.ech.n()
    }

    fn factor_dim(&self) -> usize {
        self.ech.g.ncols()
    }

    fn marginals(&self, a: &DVector<f64>, d: &DVector<f64>) -> Result<Marginals> {
        let sites = self.split_sites(a, d)?;
        let fac = self.factor(&sites)?;
        let r = self.ech.rank();
        let free = self.ech.g.ncols();
        let mut mean = DVector::zeros(r + free);
        let mut var = DVector::zeros(r + free);
        mean.rows_mut(0, r).copy_from(&fac.wbar_d);
        if let Some(post) = &fac.posterior {
            mean.rows_mut(r, free).copy_from(&fac.wbar_i);
            var.rows_mut(r, free).copy_from(&post.variances());
            // (G Σ_i Gᵀ)_rr = ‖L⁻¹ g_r‖².
            var.rows_mut(0, r)
                .copy_from(&post.quadratic_forms(&self.ech.g));
        }
        if mean.iter().chain(var.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numerical("posterior marginals are not finite"));
        }
        Ok(Marginals {
            mean: self.ech.to_original_order(&mean),
            var: self.ech.to_original_order(&var),
        })
    }
}

/// Split posterior for an echelon system and site parameters given in
/// original variable order.
pub fn zero_t_posterior(
    ech: &EchelonSystem,
    a: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<SplitState> {
    ZeroTemperature { ech: ech.clone() }.split_state(a, d)
}

/// Zero-temperature EP on a noiseless problem.
pub fn run_ep_zero_t(
    problem: &SensingProblem,
    prior: PriorParams,
    config: &EpConfig,
) -> Result<EpResult> {
    if problem.noise_variance != 0.0 {
        return Err(Error::param(
            "zero-temperature EP needs noiseless measurements (noise_variance = 0)",
        ));
    }
    config.validate()?;
    let model = ZeroTemperature::new(&problem.matrix.entries, &problem.y)?;
    run_sweeps(&model, prior, config)
}
