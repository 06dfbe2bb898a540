//! Evaluation: accuracies, harmonic mean, distribution distances, cosine
//! similarity, confusion matrices and a two-component PCA.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const DEFAULT_PROJECTIONS: usize = 128;
pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Unweighted mean of the per-class accuracies.
    pub average: f64,
    pub per_class: BTreeMap<usize, f64>,
}

/// Macro-averaged accuracy over the classes present in `labels`.
pub fn average_accuracy(predictions: &[usize], labels: &[usize]) -> Result<Accuracy> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("average_accuracy", labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &y) in predictions.iter().zip(labels) {
        let e = tally.entry(y).or_default();
        e.1 += 1;
        if p == y {
            e.0 += 1;
        }
    }
    let per_class: BTreeMap<usize, f64> = tally
        .into_iter()
        .map(|(c, (hit, n))| (c, hit as f64 / n as f64))
        .collect();
    let average = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(Accuracy { average, per_class })
}

/// `2 a b / (a + b)`, defined as 0 when either input is 0.
pub fn harmonic_mean(acc_t: f64, acc_u: f64) -> f64 {
    if acc_t <= 0.0 || acc_u <= 0.0 {
        return 0.0;
    }
    2.0 * acc_t * acc_u / (acc_t + acc_u)
}

// ---------------------------------------------------------------------------
// Wasserstein

/// Exact Wasserstein-1 between two 1-D empirical distributions.
///
/// Integrates `|F⁻¹(u) − G⁻¹(u)|` over `u ∈ (0, 1)`; both quantile functions are
/// step functions, so the integral is a sum over the union of their breakpoints.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("wasserstein of an empty sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    // Breakpoints are i/n and j/m; walk them with integer arithmetic on a common
    // denominator n*m to avoid rounding drift.
    let (mut i, mut j) = (0usize, 0usize);
    let (mut pos, total) = (0u128, (n as u128) * (m as u128));
    let mut acc = 0.0;
    while pos < total {
        let next_a = (i as u128 + 1) * m as u128;
        let next_b = (j as u128 + 1) * n as u128;
        let next = next_a.min(next_b);
        acc += (next - pos) as f64 * (a[i] - b[j]).abs();
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok(acc / total as f64)
}

/// Unit directions drawn from a seeded isotropic Gaussian.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let d = Matrix::randn(1, dim, &mut rng).into_data();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            out.push(d.into_iter().map(|v| v / norm).collect());
        }
    }
    out
}

fn project(x: &Matrix, dir: &[f64]) -> Vec<f64> {
    x.iter_rows()
        .map(|r| r.iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect()
}

/// Mean over seeded random unit directions of the 1-D Wasserstein-1 distance
/// between the projected samples.
pub fn sliced_wasserstein(a: &Matrix, b: &Matrix, n_projections: usize, seed: u64) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::dim("sliced_wasserstein", a.cols(), b.cols()));
    }
    if a.rows() == 0 || b.rows() == 0 || n_projections == 0 {
        return Err(Error::InvalidArgument(
            "sliced_wasserstein needs non-empty samples and projections".into(),
        ));
    }
    let dirs = random_directions(a.cols(), n_projections, seed);
    let mut total = 0.0;
    for d in &dirs {
        total += wasserstein_1d(&project(a, d), &project(b, d))?;
    }
    Ok(total / dirs.len() as f64)
}

// ---------------------------------------------------------------------------
// Cosine similarity

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosineMode {
    /// Overall mean of A against overall mean of B.
    OverallMean,
    /// Per-class means, averaged over classes present in both.
    #[default]
    ClassMean,
    /// Row i of A against row i of B.
    Pairwise,
}

impl CosineMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "overall" | "overall_mean" => Some(CosineMode::OverallMean),
            "class" | "class_mean" => Some(CosineMode::ClassMean),
            "pairwise" => Some(CosineMode::Pairwise),
            _ => None,
        }
    }
}

/// Cosine of the angle between `a` and `b`; `None` if either is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn class_means(x: &Matrix, labels: &[usize]) -> BTreeMap<usize, Vec<f64>> {
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (row, &y) in x.iter_rows().zip(labels) {
        let e = sums.entry(y).or_insert_with(|| (vec![0.0; x.cols()], 0));
        for (s, v) in e.0.iter_mut().zip(row) {
            *s += v;
        }
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(c, (s, n))| (c, s.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

/// Mean cosine similarity between two feature sets. Zero vectors are skipped
/// with a warning; if every pair is skipped the call fails.
pub fn mean_cosine_similarity(
    a: &Matrix,
    labels_a: &[usize],
    b: &Matrix,
    labels_b: &[usize],
    mode: CosineMode,
) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::dim("mean_cosine_similarity", a.cols(), b.cols()));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::InvalidArgument("cosine similarity of an empty set".into()));
    }
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = match mode {
        CosineMode::OverallMean => vec![(a.col_means(), b.col_means())],
        CosineMode::ClassMean => {
            if labels_a.len() != a.rows() || labels_b.len() != b.rows() {
                return Err(Error::dim("mean_cosine_similarity labels", a.rows(), labels_a.len()));
            }
            let ma = class_means(a, labels_a);
            let mut mb = class_means(b, labels_b);
            ma.into_iter()
                .filter_map(|(c, va)| mb.remove(&c).map(|vb| (va, vb)))
                .collect()
        }
        CosineMode::Pairwise => {
            if a.rows() != b.rows() {
                return Err(Error::dim("pairwise cosine", a.rows(), b.rows()));
            }
            a.iter_rows()
                .zip(b.iter_rows())
                .map(|(x, y)| (x.to_vec(), y.to_vec()))
                .collect()
        }
    };
    let sims: Vec<f64> = pairs.iter().filter_map(|(x, y)| cosine(x, y)).collect();
    let skipped = pairs.len() - sims.len();
    if skipped > 0 {
        log::warn!("cosine similarity: skipped {skipped} pair(s) with a zero vector");
    }
    if sims.is_empty() {
        return Err(Error::InvalidArgument(
            "cosine similarity: no pair without a zero vector".into(),
        ));
    }
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

// ---------------------------------------------------------------------------
// Confusion matrix

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[i][j]`: samples of true class i predicted as j.
    pub counts: Vec<Vec<u64>>,
    /// Rows divided by their sums; empty classes stay all zero.
    pub normalized: Vec<Vec<f64>>,
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("confusion_matrix", labels.len(), predictions.len()));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= n_classes || y >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "class index {} out of range for {n_classes} classes",
                p.max(y)
            )));
        }
        counts[y][p] += 1;
    }
    let normalized = counts
        .iter()
        .map(|row| {
            let s: u64 = row.iter().sum();
            row.iter()
                .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix { counts, normalized })
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `true,predicted,count,fraction` rows, one per cell.
    pub fn to_csv(&self, names: &[String]) -> String {
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut out = String::from("true,predicted,count,fraction\n");
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", name(i), name(j), c, self.normalized[i][j]);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// PCA

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    /// `n x 2` projected coordinates of the centered data.
    pub coords: Matrix,
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
    /// Eigenvalue over total variance per component.
    pub explained: [f64; 2],
}

impl Pca2d {
    pub fn to_csv(&self, labels: Option<&[usize]>) -> String {
        let mut out = String::from(if labels.is_some() { "label,pc1,pc2\n" } else { "pc1,pc2\n" });
        for (i, r) in self.coords.iter_rows().enumerate() {
            if let Some(l) = labels {
                let _ = write!(out, "{},", l[i]);
            }
            let _ = writeln!(out, "{},{}", r[0], r[1]);
        }
        out
    }
}

fn sym_matvec(c: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|i| c[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn fix_sign(v: &mut [f64]) {
    let mut k = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[k].abs() {
            k = i;
        }
    }
    if v[k] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Dominant eigenpair of a symmetric PSD matrix by power iteration.
fn power_iteration(c: &[f64], d: usize, start: &[f64]) -> (Vec<f64>, f64) {
    let mut v = start.to_vec();
    normalize(&mut v);
    for _ in 0..PCA_MAX_ITERATIONS {
        let mut w = sym_matvec(c, d, &v);
        if normalize(&mut w) == 0.0 {
            return (v, 0.0);
        }
        // Align signs before measuring the change so oscillation cannot stall.
        let dot: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        if dot < 0.0 {
            w.iter_mut().for_each(|x| *x = -*x);
        }
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if delta < PCA_TOLERANCE {
            break;
        }
    }
    let cv = sym_matvec(c, d, &v);
    let lambda = cv.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    (v, lambda)
}

/// Unit vector orthogonal to `u`, from the first basis vector not parallel to it.
fn orthogonal_to(u: &[f64]) -> Vec<f64> {
    for k in 0..u.len() {
        let mut e = vec![0.0; u.len()];
        e[k] = 1.0;
        let proj = u[k];
        for (x, ui) in e.iter_mut().zip(u) {
            *x -= proj * ui;
        }
        if normalize(&mut e) > 1e-6 {
            return e;
        }
    }
    vec![0.0; u.len()]
}

/// Projects mean-centered rows onto the top two eigenvectors of the sample covariance.
pub fn pca_2d(x: &Matrix) -> Result<Pca2d> {
    let (n, d) = x.shape();
    if n < 2 || d < 2 {
        return Err(Error::InvalidArgument(format!(
            "pca_2d needs at least 2 rows and 2 columns, got {n}x{d}"
        )));
    }
    let mean = x.col_means();
    let mut centered = x.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let cov = centered.t_matmul(&centered)?.scale(1.0 / (n as f64 - 1.0));
    let mut c = cov.into_data();
    let trace: f64 = (0..d).map(|i| c[i * d + i]).sum();
    let scale = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !trace.is_finite() || trace <= 1e-12 * scale.max(1.0) {
        return Err(Error::InvalidArgument("pca_2d: data has rank 0".into()));
    }

    // Deterministic start with weight on every coordinate.
    let start: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64 + 1.0).sqrt().fract()).collect();
    let (mut v1, l1) = power_iteration(&c, d, &start);
    fix_sign(&mut v1);
    for i in 0..d {
        for j in 0..d {
            c[i * d + j] -= l1 * v1[i] * v1[j];
        }
    }
    let mut s2 = start.clone();
    let proj: f64 = s2.iter().zip(&v1).map(|(a, b)| a * b).sum();
    for (x, u) in s2.iter_mut().zip(&v1) {
        *x -= proj * u;
    }
    if normalize(&mut s2) < 1e-8 {
        s2 = orthogonal_to(&v1);
    }
    let (mut v2, mut l2) = power_iteration(&c, d, &s2);
    if l2 <= 1e-12 * l1 {
        // Rank one: any direction orthogonal to the first carries no variance.
        v2 = orthogonal_to(&v1);
        l2 = 0.0;
    }
    fix_sign(&mut v2);

    let mut coords = Matrix::zeros(n, 2);
    for (r, row) in centered.iter_rows().enumerate() {
        coords.set(r, 0, row.iter().zip(&v1).map(|(a, b)| a * b).sum());
        coords.set(r, 1, row.iter().zip(&v2).map(|(a, b)| a * b).sum());
    }
    Ok(Pca2d {
        coords,
        explained: [(l1 / trace).clamp(0.0, 1.0), (l2 / trace).clamp(0.0, 1.0)],
        eigenvalues: [l1, l2],
        components: [v1, v2],
    })
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub average_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_u: Option<f64>,
    #[serde(rename = "H", skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gate_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wasserstein: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_cosine: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
