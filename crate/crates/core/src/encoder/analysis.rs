//! Similarity and PCA views of an embedding bank, with CSV export.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::bank::{format_focal, IntrinsicEmbeddingBank};

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub focals: Vec<f64>,
    /// Row-major cosine similarities in focal order.
    pub values: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn as_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64c()).collect()
}

/// Pairwise cosine similarity of the bank entries.
pub fn similarity_matrix<T: Scalar>(bank: &IntrinsicEmbeddingBank<T>) -> Result<SimilarityMatrix> {
    if bank.len() < 2 {
        return Err(Error::Validation("similarity analysis needs at least two bank entries".into()));
    }
    let vs: Vec<Vec<f64>> = bank.entries().iter().map(|e| as_f64(&e.vector)).collect();
    let norms: Vec<f64> = vs.iter().map(|v| dot(v, v).sqrt()).collect();
    let values = (0..vs.len())
        .map(|i| {
            (0..vs.len())
                .map(|j| (dot(&vs[i], &vs[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0))
                .collect()
        })
        .collect();
    Ok(SimilarityMatrix {
        focals: bank.focals(),
        values,
    })
}

impl SimilarityMatrix {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("focal");
        for f in &self.focals {
            let _ = write!(s, ",{}", format_focal(*f));
        }
        s.push('\n');
        for (f, row) in self.focals.iter().zip(&self.values) {
            s.push_str(&format_focal(*f));
            for v in row {
                let _ = write!(s, ",{v:.17}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Power-iteration settings for [`pca_projection`].
#[derive(Clone, Copy, Debug)]
pub struct PcaOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaProjection {
    pub focals: Vec<f64>,
    /// `coords[i][c]`: coordinate of entry `i` on component `c`.
    pub coords: Vec<Vec<f64>>,
    /// Eigenvalues of the covariance, one per component.
    pub variances: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    /// Components that were zero-filled because the data has lower rank.
    pub rank_deficient: bool,
}

/// Projects the mean-centered bank onto its top-`k` principal directions.
///
/// Directions come from power iteration with deflation on the covariance.
/// Each direction's sign is chosen so the lowest focal projects to a
/// non-negative coordinate.
pub fn pca_projection<T: Scalar>(bank: &IntrinsicEmbeddingBank<T>, k: usize, opts: PcaOptions) -> Result<PcaProjection> {
    let n = bank.len();
    let d = bank.dim();
    if n < 2 {
        return Err(Error::Validation("PCA needs at least two bank entries".into()));
    }
    if k > d {
        return Err(Error::Validation(format!("requested {k} components from {d}-dimensional embeddings")));
    }
    let rows: Vec<Vec<f64>> = bank.entries().iter().map(|e| as_f64(&e.vector)).collect();
    let mut mean = vec![0.0; d];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    let scale = x.iter().map(|r| dot(r, r)).fold(0.0, f64::max).sqrt().max(f64::MIN_POSITIVE);

    let mut directions: Vec<Vec<f64>> = Vec::new();
    let mut variances: Vec<f64> = Vec::new();
    let mut rank_deficient = false;
    if k > n - 1 {
        log::warn!("PCA: {k} components requested from {n} entries; extra components are zero");
        rank_deficient = true;
    }

    // covariance-vector product with deflation: Cv = Xᵀ(Xv)/n − Σ λ u (uᵀv)
    let cov_mul = |v: &[f64], dirs: &[Vec<f64>], vars: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for r in &x {
            let p = dot(r, v) / n as f64;
            for (o, ri) in out.iter_mut().zip(r) {
                *o += p * ri;
            }
        }
        for (u, lam) in dirs.iter().zip(vars) {
            let p = lam * dot(u, v);
            for (o, ui) in out.iter_mut().zip(u) {
                *o -= p * ui;
            }
        }
        out
    };

    for _ in 0..k.min(n - 1) {
        // Start from the centered row with the largest residual.
        let residual = |r: &Vec<f64>| {
            let mut res = r.clone();
            for u in &directions {
                let p = dot(&res, u);
                res.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
            res
        };
        let start = x
            .iter()
            .map(residual)
            .max_by(|a, b| dot(a, a).total_cmp(&dot(b, b)))
            .unwrap();
        let start_norm = dot(&start, &start).sqrt();
        if start_norm <= 1e-12 * scale {
            rank_deficient = true;
            break;
        }
        let mut v: Vec<f64> = start.iter().map(|s| s / start_norm).collect();
        let mut lambda = 0.0;
        for _ in 0..opts.max_iterations {
            let w = cov_mul(&v, &directions, &variances);
            let norm = dot(&w, &w).sqrt();
            if norm <= 1e-300 {
                lambda = 0.0;
                break;
            }
            let next: Vec<f64> = w.iter().map(|a| a / norm).collect();
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            lambda = norm;
            if delta < opts.tolerance {
                break;
            }
        }
        if lambda <= 1e-24 * scale * scale {
            rank_deficient = true;
            break;
        }
        if dot(&x[0], &v) < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
        directions.push(v);
        variances.push(lambda);
    }
    let found = directions.len();
    let coords = x
        .iter()
        .map(|r| {
            (0..k)
                .map(|c| if c < found { dot(r, &directions[c]) } else { 0.0 })
                .collect()
        })
        .collect();
    while variances.len() < k {
        variances.push(0.0);
        directions.push(vec![0.0; d]);
    }
    Ok(PcaProjection {
        focals: bank.focals(),
        coords,
        variances,
        directions,
        rank_deficient,
    })
}

impl PcaProjection {
    pub fn to_csv(&self) -> String {
        let k = self.variances.len();
        let mut s = String::from("focal");
        for c in 1..=k {
            let _ = write!(s, ",c{c}");
        }
        s.push('\n');
        for (f, row) in self.focals.iter().zip(&self.coords) {
            s.push_str(&format_focal(*f));
            for v in row {
                let _ = write!(s, ",{v:.17}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
