//! Plain-text matrix/vector files and on-disk problem bundles.
//!
//! A matrix file starts with a `M N` header followed by `M` lines of `N`
//! whitespace-separated values; a vector file holds one value per line. All
//! values are written with 17 significant digits so they round-trip exactly.
//! A bundle is a directory holding `F.mat`, `y.vec`, an optional `w.vec`, and
//! `meta.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{MatrixKind, SensingMatrix, SensingProblem, SparseSignal};

pub const MATRIX_FILE: &str = "F.mat";
pub const MEASUREMENT_FILE: &str = "y.vec";
pub const SIGNAL_FILE: &str = "w.vec";
pub const META_FILE: &str = "meta.json";

/// Formats a value with 17 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Shortest round-trip form, switching to exponent notation for very small
/// or large magnitudes.
pub fn csv_value(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn matrix_to_string(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 24 + 16);
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_value(m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn vector_to_string(v: &DVector<f64>) -> String {
    let mut out = String::with_capacity(v.len() * 24);
    for x in v.iter() {
        out.push_str(&format_value(*x));
        out.push('\n');
    }
    out
}

fn parse_value(tok: &str, path: &Path) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::format(path, format!("not a number: {tok:?}")))
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty matrix file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, format!("bad header {header:?}")))?;
    let [rows, cols] = dims[..] else {
        return Err(Error::format(path, format!("bad header {header:?}")));
    };
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(path, format!("expected {rows} rows, found {i}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| parse_value(t, path))
            .collect::<Result<_>>()?;
        if vals.len() != cols {
            return Err(Error::format(
                path,
                format!("row {i} has {} values, expected {cols}", vals.len()),
            ));
        }
        for (j, v) in vals.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    if lines.next().is_some() {
        return Err(Error::format(path, "trailing rows after matrix body"));
    }
    Ok(out)
}

pub fn parse_vector(text: &str, path: &Path) -> Result<DVector<f64>> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| parse_value(t, path))
        .collect::<Result<_>>()?;
    Ok(DVector::from_vec(vals))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_text(path, &matrix_to_string(m))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&read_text(path)?, path)
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_text(path, &vector_to_string(v))
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    parse_vector(&read_text(path)?, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub rho: f64,
    pub lambda: f64,
    pub matrix: MatrixKind,
    /// Rank of the correlated part, `null` for i.i.d. matrices.
    pub k: Option<usize>,
    pub noise_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl BundleMeta {
    pub fn for_problem(problem: &SensingProblem, rho: f64, lambda: f64) -> Self {
        let k = match problem.matrix.kind {
            MatrixKind::Iid => None,
            MatrixKind::Correlated(k) => Some(k),
        };
        BundleMeta {
            seed: problem.seed,
            n: problem.n(),
            m: problem.m(),
            rho,
            lambda,
            matrix: problem.matrix.kind,
            k,
            noise_variance: problem.noise_variance,
            manifest: None,
        }
    }
}

pub fn write_bundle(dir: &Path, problem: &SensingProblem, meta: &BundleMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(&dir.join(MATRIX_FILE), &problem.matrix.entries)?;
    write_vector(&dir.join(MEASUREMENT_FILE), &problem.y)?;
    if let Some(truth) = &problem.truth {
        write_vector(&dir.join(SIGNAL_FILE), &truth.values)?;
    }
    write_json(&dir.join(META_FILE), meta)
}

/// Loads a bundle. `meta.json` is optional for hand-made bundles.
pub fn read_bundle(dir: &Path) -> Result<(SensingProblem, Option<BundleMeta>)> {
    let entries = read_matrix(&dir.join(MATRIX_FILE))?;
    let y = read_vector(&dir.join(MEASUREMENT_FILE))?;
    if y.len() != entries.nrows() {
        return Err(Error::format(
            dir.join(MEASUREMENT_FILE),
            format!(
                "length {} does not match {} matrix rows",
                y.len(),
                entries.nrows()
            ),
        ));
    }
    let meta_path = dir.join(META_FILE);
    let meta: Option<BundleMeta> = if meta_path.exists() {
        Some(read_json(&meta_path)?)
    } else {
        None
    };
    let w_path = dir.join(SIGNAL_FILE);
    let truth = if w_path.exists() {
        let w = read_vector(&w_path)?;
        if w.len() != entries.ncols() {
            return Err(Error::format(
                w_path,
                format!(
                    "length {} does not match {} matrix columns",
                    w.len(),
                    entries.ncols()
                ),
            ));
        }
        let lambda = meta.as_ref().map_or(1.0, |m| m.lambda);
        Some(SparseSignal::from_values(w, lambda))
    } else {
        None
    };
    let kind = meta.as_ref().map_or(MatrixKind::Iid, |m| m.matrix);
    let problem = SensingProblem {
        matrix: SensingMatrix {
            entries,
            kind,
            row_covariance: None,
        },
        y,
        truth,
        noise_variance: meta.as_ref().map_or(0.0, |m| m.noise_variance),
        seed: meta.as_ref().map_or(0, |m| m.seed),
    };
    Ok((problem, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matrix_text_round_trips(rows in 1usize..5, cols in 1usize..5,
                                   vals in proptest::collection::vec(-1e300f64..1e300, 25)) {
            let m = DMatrix::from_fn(rows, cols, |i, j| vals[i * 5 + j] * 1e-150);
            let back = parse_matrix(&matrix_to_string(&m), Path::new("mem")).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn vector_text_round_trips(vals in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..20)) {
            let v = DVector::from_vec(vals);
            let back = parse_vector(&vector_to_string(&v), Path::new("mem")).unwrap();
            prop_assert_eq!(back, v);
        }
    }

    #[test]
    fn malformed_matrix_is_rejected() {
        let p = Path::new("x");
        assert!(parse_matrix("", p).is_err());
        assert!(parse_matrix("2 2\n1 2\n", p).is_err());
        assert!(parse_matrix("1 2\n1 2 3\n", p).is_err());
        assert!(parse_matrix("1 1\nabc\n", p).is_err());
        assert!(parse_matrix("1 1\n1\n2\n", p).is_err());
    }
}
