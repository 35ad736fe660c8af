//! Square-root factor of a Gaussian posterior precision `P = K + diag(1/d)`,
//! where `K = BᵀB` comes from linear observations of the variables.
//!
//! The fast path is a Cholesky factorization of `P`. When sites span many
//! orders of magnitude (`d` between 1e-11 and 1e11 next to β = 1e9) the
//! assembled `P` can lose positive definiteness to roundoff even though it
//! is positive definite in exact arithmetic. The fallback then factors the
//! stacked square root `[diag(d^{-1/2}); B]` by Householder QR, which never
//! forms `P` and so works with the square root of its condition number.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A Cholesky pivot (or a variance computed by subtraction) that shrank by more than this factor relative to its
/// diagonal entry has lost too many digits to cancellation.
const MAX_PIVOT_DECAY: f64 = 1e8;

/// Lower-triangular `L` with `L Lᵀ = P`, plus the posterior mean.
#[derive(Debug, Clone)]
pub(crate) struct PrecisionFactor {
    l: DMatrix<f64>,
    pub mean: DVector<f64>,
}

/// Observation rows `B` and their right-hand side, so that the posterior is
/// `∝ exp(-½‖Bx - z‖²) N(x; a, diag(d))`.
pub(crate) struct Observations {
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl PrecisionFactor {
    /// `gram = BᵀB` and `linear = Bᵀz + a/d` are supplied precomputed for the
    /// fast path; `observations` is only evaluated on fallback.
    pub fn new(
        gram: &DMatrix<f64>,
        linear: &DVector<f64>,
        a: &DVector<f64>,
        d: &DVector<f64>,
        observations: impl FnOnce() -> Observations,
    ) -> Result<Self> {
        match Self::cholesky(gram, linear, d) {
            Ok(f) => Ok(f),
            Err(diag) => Self::from_square_root(a, d, observations())
                .map_err(|e| Error::numerical(format!("{e} (precision diagonal range {diag})"))),
        }
    }

    /// Cholesky of `gram + diag(1/d)`. On failure returns the precision's
    /// diagonal range for diagnostics.
    pub fn cholesky(
        gram: &DMatrix<f64>,
        linear: &DVector<f64>,
        d: &DVector<f64>,
    ) -> std::result::Result<Self, String> {
        let mut p = gram.clone();
        for (i, di) in d.iter().enumerate() {
            p[(i, i)] += 1.0 / di;
        }
        let diag = p.diagonal();
        if let Some(chol) = p.cholesky() {
            let l = chol.l_dirty();
            let lost = (0..diag.len()).any(|i| diag[i] > MAX_PIVOT_DECAY * l[(i, i)] * l[(i, i)]);
            let mean = chol.solve(linear);
            if !lost && mean.iter().all(|v| v.is_finite()) {
                return Ok(PrecisionFactor {
                    l: chol.unpack_dirty(),
                    mean,
                });
            }
        }
        Err(format!("[{:e}, {:e}]", diag.min(), diag.max()))
    }

    /// Householder QR of `[diag(d^{-1/2}); B]`. Every reflector touches one
    /// diagonal row and the `M` observation rows only, so the cost is
    /// `O(M N²)` instead of the dense `O((N+M) N²)`.
    pub fn from_square_root(a: &DVector<f64>, d: &DVector<f64>, obs: Observations) -> Result<Self> {
        let n = d.len();
        let Observations {
            rows: mut b,
            rhs: mut zb,
        } = obs;
        let mut r = DMatrix::zeros(n, n);
        let mut c = DVector::from_fn(n, |i, _| a[i] / d[i].sqrt());
        for k in 0..n {
            let x0 = 1.0 / d[k].sqrt();
            let vb = b.column(k).clone_owned();
            let norm = x0.hypot(vb.norm());
            let alpha = -norm.copysign(x0);
            let v0 = x0 - alpha;
            let vv = v0 * v0 + vb.norm_squared();
            r[(k, k)] = alpha;
            if vv == 0.0 {
                continue;
            }
            let tau = 2.0 / vv;
            for j in k + 1..n {
                let w = vb.dot(&b.column(j));
                r[(k, j)] = -tau * v0 * w;
                b.column_mut(j).axpy(-tau * w, &vb, 1.0);
            }
            let w = v0 * c[k] + vb.dot(&zb);
            c[k] -= tau * v0 * w;
            zb.axpy(-tau * w, &vb, 1.0);
            b.column_mut(k).fill(0.0);
        }
        if (0..n).any(|i| !(r[(i, i)].abs() > 0.0) || !r[(i, i)].is_finite()) {
            return Err(Error::numerical(
                "square-root factor of the precision is singular",
            ));
        }
        let mut mean = c;
        r.solve_upper_triangular_unchecked_mut(&mut mean);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("posterior mean is not finite"));
        }
        Ok(PrecisionFactor {
            l: r.transpose(),
            mean,
        })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `log det P`.
    pub fn ln_det(&self) -> f64 {
        self.l.diagonal().iter().map(|v| 2.0 * v.abs().ln()).sum()
    }

    /// `L⁻¹`, whose column norms are the posterior variances.
    pub fn l_inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut linv = DMatrix::identity(n, n);
        self.l.solve_lower_triangular_unchecked_mut(&mut linv);
        linv
    }

    /// `diag(P⁻¹)`.
    pub fn variances(&self) -> DVector<f64> {
        let linv = self.l_inverse();
        DVector::from_iterator(self.dim(), linv.column_iter().map(|c| c.norm_squared()))
    }

    /// `P⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let linv = self.l_inverse();
        linv.tr_mul(&linv)
    }

    /// `g_r P⁻¹ g_rᵀ` for every row `g_r` of `rows`.
    pub fn quadratic_forms(&self, rows: &DMatrix<f64>) -> DVector<f64> {
        let mut lg = rows.transpose();
        self.l.solve_lower_triangular_unchecked_mut(&mut lg);
        DVector::from_iterator(rows.nrows(), lg.column_iter().map(|c| c.norm_squared()))
    }
}
