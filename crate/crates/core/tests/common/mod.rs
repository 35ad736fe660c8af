//! Independent oracles shared by the integration tests. None of these call
//! into the closed forms they are used to check.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use epsense::problem::{ProblemSpec, SensingProblem};

const K15_NODES: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights on K15_NODES[1], [3], [5], [7].
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Kronrod estimate, error estimate and `∫|f|` on one panel.
fn kronrod_panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let (mut k, mut g, mut abs) = (0.0, 0.0, 0.0);
    for (i, (&x, &w)) in K15_NODES.iter().zip(&K15_WEIGHTS).enumerate() {
        let (lo, hi) = if x == 0.0 { (f(c), 0.0) } else { (f(c - h * x), f(c + h * x)) };
        k += w * (lo + hi);
        abs += w * (lo.abs() + hi.abs());
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * (lo + hi);
        }
    }
    (k * h, ((k - g) * h).abs(), abs * h.abs())
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (val, err, abs) = kronrod_panel(f, a, b);
    // Below the roundoff floor further splitting cannot help.
    if err <= tol || err <= 50.0 * f64::EPSILON * abs || depth == 0 {
        return val;
    }
    let c = 0.5 * (a + b);
    adapt(f, a, c, 0.5 * tol, depth - 1) + adapt(f, c, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss-Kronrod (7/15) quadrature on `[a, b]` to relative
/// accuracy `rel` of `∫|f|`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    const PANELS: usize = 16;
    let h = (b - a) / PANELS as f64;
    let edges: Vec<(f64, f64)> = (0..PANELS).map(|i| (a + i as f64 * h, a + (i + 1) as f64 * h)).collect();
    let abs: f64 = edges.iter().map(|&(lo, hi)| kronrod_panel(&f, lo, hi).2).sum();
    let tol = rel * abs / PANELS as f64;
    edges.iter().map(|&(lo, hi)| adapt(&f, lo, hi, tol, 30)).sum()
}

/// Minimizer of a unimodal function on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

fn ln_gauss(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

/// `(log Z, ⟨w⟩, ⟨w²⟩)` of `N(w; m, v) [(1-ρ) δ(w) + ρ N(w; 0, λ)]`, the
/// point mass handled exactly and the slab integrated numerically around
/// its numerically located peak.
pub fn tilted_by_quadrature(m: f64, v: f64, rho: f64, lambda: f64) -> (f64, f64, f64) {
    let ln_slab = |w: f64| rho.ln() + ln_gauss(w, m, v) + ln_gauss(w, 0.0, lambda);
    let span = m.abs() + 50.0 * (v.max(lambda)).sqrt() + 1.0;
    let peak = golden_section(|w| -ln_slab(w), -span, span, 1e-12 * span);
    // Curvature by finite differences sets the integration window.
    let h = 1e-3 * v.min(lambda).sqrt();
    let curv = -(ln_slab(peak + h) - 2.0 * ln_slab(peak) + ln_slab(peak - h)) / (h * h);
    let width = 1.0 / curv.sqrt();
    let (lo, hi) = (peak - 40.0 * width, peak + 40.0 * width);
    let shift = ln_slab(peak);
    let scaled = |w: f64| (ln_slab(w) - shift).exp();
    let i0 = integrate(scaled, lo, hi, 1e-13);
    let i1 = integrate(|w| w * scaled(w), lo, hi, 1e-13);
    let i2 = integrate(|w| w * w * scaled(w), lo, hi, 1e-13);

    let ln_spike = if rho < 1.0 {
        (1.0 - rho).ln() + ln_gauss(0.0, m, v)
    } else {
        f64::NEG_INFINITY
    };
    let ln_slab_mass = shift + i0.ln();
    let hi_ln = ln_spike.max(ln_slab_mass);
    let log_z = hi_ln + ((ln_spike - hi_ln).exp() + (ln_slab_mass - hi_ln).exp()).ln();
    let scale = (shift - log_z).exp();
    (log_z, i1 * scale, i2 * scale)
}

/// `H(x)` by quadrature of the standard normal density.
pub fn tail_by_quadrature(x: f64) -> f64 {
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
    if x >= 0.0 {
        integrate(phi, x, x + 40.0, 1e-15)
    } else {
        1.0 - integrate(phi, -x, -x + 40.0, 1e-15)
    }
}

/// Both L1 residuals, with the tail evaluated by quadrature.
pub fn l1_residuals_by_quadrature(rho: f64, alpha: f64, chi: f64) -> (f64, f64) {
    let x = 1.0 / chi.sqrt();
    let h = tail_by_quadrature(x);
    let g = chi.sqrt() * (-1.0 / (2.0 * chi)).exp() / (2.0 * PI).sqrt();
    let r1 = alpha - 2.0 * (1.0 - rho) * h - rho;
    let r2 = chi - (2.0 * (1.0 - rho) * ((chi + 1.0) * h - g) + rho * (chi + 1.0)) / alpha;
    (r1, r2)
}

/// Brute 2-D grid search with repeated zooming for `(α, χ̂)` minimizing the
/// larger L1 residual.
pub fn l1_grid_oracle(rho: f64) -> (f64, f64) {
    let score = |alpha: f64, t: f64| {
        let (r1, r2) = l1_residuals_by_quadrature(rho, alpha, t.exp());
        r1.abs().max(r2.abs())
    };
    let (mut a_lo, mut a_hi) = (rho, 1.0);
    let (mut t_lo, mut t_hi) = (-12.0, 12.0);
    let steps = 60;
    let mut best = (0.5 * (a_lo + a_hi), 0.0);
    for _ in 0..16 {
        let mut best_score = f64::INFINITY;
        for i in 0..=steps {
            let alpha = a_lo + (a_hi - a_lo) * i as f64 / steps as f64;
            for j in 0..=steps {
                let t = t_lo + (t_hi - t_lo) * j as f64 / steps as f64;
                let s = score(alpha, t);
                if s < best_score {
                    best_score = s;
                    best = (alpha, t);
                }
            }
        }
        let (da, dt) = ((a_hi - a_lo) / steps as f64, (t_hi - t_lo) / steps as f64);
        a_lo = (best.0 - 4.0 * da).max(rho);
        a_hi = (best.0 + 4.0 * da).min(1.0);
        t_lo = best.1 - 4.0 * dt;
        t_hi = best.1 + 4.0 * dt;
    }
    (best.0, best.1.exp())
}

/// Advances `c` to the next `k`-subset of `0..n` in lexicographic order.
pub fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Sparsest exact solution of `F w = y`, by least squares on every support
/// of size `1..=max_k` in increasing size.
pub fn sparsest_solution(f: &DMatrix<f64>, y: &DVector<f64>, max_k: usize) -> Option<DVector<f64>> {
    let n = f.ncols();
    let scale = y.norm().max(1e-300);
    for k in 1..=max_k {
        let mut support: Vec<usize> = (0..k).collect();
        loop {
            let sub = f.select_columns(&support);
            let svd = sub.clone().svd(true, true);
            if let Ok(coef) = svd.solve(y, 1e-12) {
                if (&sub * &coef - y).norm() < 1e-9 * scale {
                    let mut w = DVector::zeros(n);
                    for (slot, &j) in support.iter().enumerate() {
                        w[j] = coef[slot];
                    }
                    return Some(w);
                }
            }
            if !next_combination(&mut support, n) {
                break;
            }
        }
    }
    None
}

/// Dense precision `βFᵀF + Σ_{i∈sites} e_i e_iᵀ/d_i` and linear term.
fn dense_posterior(
    f: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: f64,
    a: &DVector<f64>,
    d: &DVector<f64>,
    skip: Option<usize>,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut p = f.transpose() * f * beta;
    let mut b = f.transpose() * y * beta;
    for i in 0..a.len() {
        if Some(i) != skip {
            p[(i, i)] += 1.0 / d[i];
            b[i] += a[i] / d[i];
        }
    }
    (p, b)
}

/// Cavity marginal of variable `n` by inverting the posterior with site `n`
/// removed.
pub fn cavity_by_inversion(
    f: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: f64,
    a: &DVector<f64>,
    d: &DVector<f64>,
    n: usize,
) -> (f64, f64) {
    let (p, b) = dense_posterior(f, y, beta, a, d, Some(n));
    let inv = p.try_inverse().expect("cavity precision invertible");
    let mean = &inv * &b;
    (mean[n], inv[(n, n)])
}

/// `log ∫ (β/2π)^{M/2} e^{-β‖y-Fw‖²/2} Π_{i≠skip} N(w_i; a_i, d_i) dw` by
/// Gaussian integration with a dense determinant.
fn ln_gaussian_mass(
    f: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: f64,
    a: &DVector<f64>,
    d: &DVector<f64>,
    skip: Option<usize>,
) -> f64 {
    let (m, n) = f.shape();
    let (p, b) = dense_posterior(f, y, beta, a, d, skip);
    let ln_det = p.clone().determinant().ln();
    let mean = p.try_inverse().expect("precision invertible") * &b;
    let mut c = beta * y.norm_squared();
    let mut norm = 0.5 * m as f64 * (beta / (2.0 * PI)).ln();
    for i in 0..n {
        if Some(i) != skip {
            c += a[i] * a[i] / d[i];
            norm -= 0.5 * (2.0 * PI * d[i]).ln();
        }
    }
    norm + 0.5 * n as f64 * (2.0 * PI).ln() - 0.5 * ln_det - 0.5 * c + 0.5 * b.dot(&mean)
}

/// `F_EP = (N-1) log Z_Q - Σ_n log Z_{Q(n)}` from its definition, with each
/// tilted normalizer built from the site-removed Gaussian mass.
pub fn free_energy_by_definition(
    f: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: f64,
    a: &DVector<f64>,
    d: &DVector<f64>,
    rho: f64,
    lambda: f64,
) -> f64 {
    let n = f.ncols();
    let log_zq = ln_gaussian_mass(f, y, beta, a, d, None);
    let mut total = (n as f64 - 1.0) * log_zq;
    for i in 0..n {
        let rest = ln_gaussian_mass(f, y, beta, a, d, Some(i));
        let (cm, cv) = cavity_by_inversion(f, y, beta, a, d, i);
        let spike = (1.0 - rho) * ln_gauss(0.0, cm, cv).exp();
        let slab = rho * ln_gauss(0.0, cm, cv + lambda).exp();
        total -= rest + (spike + slab).ln();
    }
    total
}

/// Noiseless i.i.d. instance at `(ρ, α)` with `λ = 1`.
pub fn iid_problem(n: usize, rho: f64, alpha: f64, seed: u64) -> SensingProblem {
    ProblemSpec::iid(n, rho, alpha).generate(seed).expect("valid problem")
}

pub fn truth(problem: &SensingProblem) -> &DVector<f64> {
    &problem.truth.as_ref().expect("synthetic problem").values
}

#[test]
fn quadrature_self_check() {
    let g = integrate(|x| (-0.5 * x * x).exp(), -40.0, 40.0, 1e-14);
    assert!((g - (2.0 * PI).sqrt()).abs() < 1e-13);
    assert!((tail_by_quadrature(0.0) - 0.5).abs() < 1e-15);
    let x = golden_section(|x| (x - 0.3).powi(2), -1.0, 1.0, 1e-10);
    assert!((x - 0.3).abs() < 1e-9);
}
