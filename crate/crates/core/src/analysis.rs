//! Embedding diagnostics and the executable no-collapse check.
//!
//! [`verify_no_collapse`] takes embeddings of observations with known source
//! ids and a separation relation `R*`, and reports every pair that `R*` says
//! must stay apart but whose embeddings are closer than `eps`. Under perfect
//! training this list is empty; that is the statement being tested.

use std::fmt::Write as _;

use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::relation::PairRelation;

pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERATIONS: usize = 10_000;
/// At most this many violations are written to JSON, smallest distance first.
pub const MAX_REPORTED_VIOLATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// `N x latent_dim`
    pub vectors: Tensor,
    /// Ground-truth class per row, in `[0, num_labels)`.
    pub labels: Vec<usize>,
    pub num_labels: usize,
    /// Observation id of each row, when rows come from a tabular MDP or a
    /// count-level abstraction.
    pub source_ids: Option<Vec<usize>>,
}

impl EmbeddingSet {
    pub fn new(vectors: Tensor, labels: Vec<usize>, num_labels: usize) -> Result<Self> {
        if vectors.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} vectors but {} labels",
                vectors.nrows(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_labels) {
            return Err(Error::InvalidConfig(format!("label {l} >= {num_labels}")));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding set".into()));
        }
        Ok(Self {
            vectors,
            labels,
            num_labels,
            source_ids: None,
        })
    }

    pub fn with_source_ids(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::DimensionMismatch("source_ids length".into()));
        }
        self.source_ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        self.vectors
            .row(i)
            .iter()
            .zip(self.vectors.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn centroids(&self) -> Result<Vec<Vec<f64>>> {
        let dim = self.vectors.ncols();
        let mut sums = vec![vec![0.0; dim]; self.num_labels];
        let mut counts = vec![0usize; self.num_labels];
        for (row, &l) in self.vectors.rows().into_iter().zip(&self.labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(row) {
                *s += v;
            }
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidConfig(format!("label class {empty} has no members")));
        }
        for (s, &c) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
        Ok(sums)
    }
}

/// Pairwise ℓ2 distances with rows sorted by `(label, source_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    /// Original row index of each sorted position.
    pub order: Vec<usize>,
    pub labels: Vec<usize>,
    pub values: Tensor,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    /// Grayscale P6 heatmap (black = 0, white = max distance) with one-pixel
    /// red lines inserted wherever the label changes.
    pub fn to_ppm(&self) -> Vec<u8> {
        let n = self.len();
        let max = self.values.iter().copied().fold(0.0, f64::max);
        let boundary: Vec<bool> = (0..n)
            .map(|i| i > 0 && self.labels[i] != self.labels[i - 1])
            .collect();
        // Pixel coordinate -> Some(matrix index) or None for a boundary line.
        let mut axis = Vec::with_capacity(n + boundary.len());
        for i in 0..n {
            if boundary[i] {
                axis.push(None);
            }
            axis.push(Some(i));
        }
        let side = axis.len();
        let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
        for &r in &axis {
            for &c in &axis {
                match (r, c) {
                    (Some(i), Some(j)) => {
                        let v = if max > 0.0 { self.values[[i, j]] / max } else { 0.0 };
                        let g = (v * 255.0).round() as u8;
                        out.extend([g, g, g]);
                    }
                    _ => out.extend([255, 0, 0]),
                }
            }
        }
        out
    }
}

pub fn pairwise_distances(embs: &EmbeddingSet) -> DistanceMatrix {
    let mut order: Vec<usize> = (0..embs.len()).collect();
    order.sort_by_key(|&i| {
        (
            embs.labels[i],
            embs.source_ids.as_ref().map_or(0, |s| s[i]),
            i,
        )
    });
    let n = order.len();
    let mut values = Tensor::zeros((n, n));
    for a in 0..n {
        for b in (a + 1)..n {
            let d = embs.distance(order[a], order[b]);
            values[[a, b]] = d;
            values[[b, a]] = d;
        }
    }
    DistanceMatrix {
        labels: order.iter().map(|&i| embs.labels[i]).collect(),
        order,
        values,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `N x 2`
    pub projection: Tensor,
    pub eigenvalues: [f64; 2],
    pub explained_variance: [f64; 2],
    pub components: [Vec<f64>; 2],
}

impl Pca {
    pub fn to_csv(&self, labels: &[usize]) -> String {
        let mut out = String::from("x,y,label\n");
        for (row, l) in self.projection.rows().into_iter().zip(labels) {
            let _ = writeln!(out, "{},{},{l}", row[0], row[1]);
        }
        out
    }
}

/// Top-two principal components by power iteration with deflation.
pub fn pca_2d(embs: &EmbeddingSet) -> Result<Pca> {
    let n = embs.len();
    if n < 3 {
        return Err(Error::InvalidConfig(format!("PCA needs at least 3 points, got {n}")));
    }
    let mean = embs.vectors.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = &embs.vectors - &mean;
    let mut cov = centered.t().dot(&centered) / n as f64;
    let total: f64 = cov.diag().sum();

    let dim = cov.nrows();
    let mut components: [Vec<f64>; 2] = [vec![0.0; dim], vec![0.0; dim]];
    let mut eigenvalues = [0.0; 2];
    for k in 0..2.min(dim) {
        let (value, vector) = power_iteration(&cov, &components[..k], total)?;
        for i in 0..dim {
            for j in 0..dim {
                cov[[i, j]] -= value * vector[i] * vector[j];
            }
        }
        eigenvalues[k] = value;
        components[k] = vector;
    }
    let basis = Tensor::from_shape_fn((dim, 2), |(i, k)| components[k][i]);
    let projection = centered.dot(&basis);
    let explained_variance = if total > 0.0 {
        [eigenvalues[0] / total, eigenvalues[1] / total]
    } else {
        [0.0, 0.0]
    };
    Ok(Pca {
        projection,
        eigenvalues,
        explained_variance,
        components,
    })
}

/// Dominant eigenpair of a symmetric PSD matrix, restricted to the
/// orthogonal complement of `previous`. Converges when the residual
/// `||Av - λv||` drops below `PCA_TOLERANCE * max(trace, 1)`.
fn power_iteration(a: &Tensor, previous: &[Vec<f64>], trace: f64) -> Result<(f64, Vec<f64>)> {
    let dim = a.nrows();
    let orthogonalize = |v: &mut Vec<f64>| {
        for p in previous {
            let d: f64 = v.iter().zip(p).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(p).for_each(|(x, y)| *x -= d * y);
        }
    };
    let normalize = |v: &mut Vec<f64>| -> f64 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        norm
    };
    // Start from the heaviest column, which lies in the range of `a`; a fixed
    // start vector can be orthogonal to a degenerate eigenspace.
    let heaviest = (0..dim)
        .max_by(|&i, &j| a[[i, i]].total_cmp(&a[[j, j]]))
        .unwrap_or(0);
    let scale = trace.max(1.0);
    let mut v: Vec<f64> = a.column(heaviest).to_vec();
    orthogonalize(&mut v);
    if normalize(&mut v) <= PCA_TOLERANCE * scale {
        // Nothing left in the range; any direction orthogonal to `previous`
        // will do.
        v = (0..dim).map(|i| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3).collect();
        orthogonalize(&mut v);
        if normalize(&mut v) == 0.0 {
            // previous vectors already span the space
            return Ok((0.0, v));
        }
        orthogonalize(&mut v);
        normalize(&mut v);
    }
    for _ in 0..PCA_MAX_ITERATIONS {
        let mut w: Vec<f64> = (0..dim)
            .map(|i| (0..dim).map(|j| a[[i, j]] * v[j]).sum())
            .collect();
        orthogonalize(&mut w);
        let lambda: f64 = w.iter().zip(&v).map(|(x, y)| x * y).sum();
        let residual = w
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - lambda * y).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= PCA_TOLERANCE * scale {
            return Ok((lambda.max(0.0), fix_sign(v)));
        }
        if normalize(&mut w) <= PCA_TOLERANCE * scale {
            // Remaining spectrum is zero; any unit vector orthogonal to
            // `previous` is an eigenvector.
            return Ok((0.0, fix_sign(v)));
        }
        v = w;
    }
    Err(Error::NoConvergence(PCA_MAX_ITERATIONS))
}

fn fix_sign(mut v: Vec<f64>) -> Vec<f64> {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    v
}

/// Fraction of rows whose nearest label centroid is their own label's.
/// Ties go to the smaller label.
pub fn nearest_centroid_accuracy(embs: &EmbeddingSet) -> Result<f64> {
    if embs.is_empty() {
        return Err(Error::InvalidConfig("no embeddings".into()));
    }
    let centroids = embs.centroids()?;
    let correct = embs
        .vectors
        .rows()
        .into_iter()
        .zip(&embs.labels)
        .filter(|(row, &label)| {
            let mut best = (f64::INFINITY, usize::MAX);
            for (l, c) in centroids.iter().enumerate() {
                let d: f64 = row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, l);
                }
            }
            best.1 == label
        })
        .count();
    Ok(correct as f64 / embs.len() as f64)
}

/// Pooled within-class variance over total variance:
/// `Σ_i ||x_i - c_{y_i}||² / Σ_i ||x_i - x̄||²`. Equals 1 when the total
/// variance is zero.
pub fn collapse_ratio(embs: &EmbeddingSet) -> Result<f64> {
    if embs.len() < 2 {
        return Err(Error::InvalidConfig("collapse_ratio needs at least 2 points".into()));
    }
    let mean = embs.vectors.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let total: f64 = embs
        .vectors
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    // Classes with no members contribute nothing.
    let dim = embs.vectors.ncols();
    let mut sums = vec![vec![0.0; dim]; embs.num_labels];
    let mut counts = vec![0usize; embs.num_labels];
    for (row, &l) in embs.vectors.rows().into_iter().zip(&embs.labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    let within: f64 = embs
        .vectors
        .rows()
        .into_iter()
        .zip(&embs.labels)
        .map(|(r, &l)| {
            r.iter()
                .zip(&sums[l])
                .map(|(a, s)| (a - s / counts[l] as f64).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(within / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceSummary {
    pub median_within_label: f64,
    pub median_across_labels: f64,
}

/// Medians of pairwise distances between rows with equal and with different
/// labels.
pub fn distance_summary(embs: &EmbeddingSet) -> DistanceSummary {
    let mut within = Vec::new();
    let mut across = Vec::new();
    for i in 0..embs.len() {
        for j in (i + 1)..embs.len() {
            let d = embs.distance(i, j);
            if embs.labels[i] == embs.labels[j] {
                within.push(d);
            } else {
                across.push(d);
            }
        }
    }
    DistanceSummary {
        median_within_label: median(&mut within),
        median_across_labels: median(&mut across),
    }
}

/// Median of all off-diagonal pairwise distances.
pub fn median_pairwise_distance(embs: &EmbeddingSet) -> f64 {
    let mut all: Vec<f64> = (0..embs.len())
        .flat_map(|i| ((i + 1)..embs.len()).map(move |j| (i, j)))
        .map(|(i, j)| embs.distance(i, j))
        .collect();
    median(&mut all)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseReport {
    pub pairs_checked: usize,
    /// Sorted by distance, smallest first.
    pub violations: Vec<Violation>,
    /// Smallest distance between rows whose sources are in `R*`.
    pub min_cross_class_distance: Option<f64>,
    /// Largest distance between rows whose sources are not in `R*`.
    pub max_within_class_distance: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Serialize)]
struct CollapseReportJson<'a> {
    pairs_checked: usize,
    num_violations: usize,
    violations: &'a [Violation],
    min_cross_class_distance: Option<f64>,
    max_within_class_distance: Option<f64>,
    verdict: Verdict,
}

impl CollapseReport {
    pub fn to_json(&self) -> serde_json::Value {
        let shown = self.violations.len().min(MAX_REPORTED_VIOLATIONS);
        serde_json::to_value(CollapseReportJson {
            pairs_checked: self.pairs_checked,
            num_violations: self.violations.len(),
            violations: &self.violations[..shown],
            min_cross_class_distance: self.min_cross_class_distance,
            max_within_class_distance: self.max_within_class_distance,
            verdict: self.verdict,
        })
        .expect("plain data serializes")
    }
}

/// Flags every row pair whose sources are separated by `r_star` but whose
/// embeddings are closer than `eps_collapse`.
pub fn verify_no_collapse(
    embs: &EmbeddingSet,
    r_star: &PairRelation,
    eps_collapse: f64,
) -> Result<CollapseReport> {
    let ids = embs
        .source_ids
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("verify_no_collapse needs source_ids".into()))?;
    if let Some(&bad) = ids.iter().find(|&&s| s >= r_star.num_observations()) {
        return Err(Error::DimensionMismatch(format!(
            "source id {bad} outside relation over {} observations",
            r_star.num_observations()
        )));
    }
    let mut pairs_checked = 0;
    let mut violations = Vec::new();
    let mut min_cross: Option<f64> = None;
    let mut max_within: Option<f64> = None;
    for i in 0..embs.len() {
        for j in (i + 1)..embs.len() {
            let d = embs.distance(i, j);
            if r_star.contains(ids[i], ids[j]) {
                pairs_checked += 1;
                min_cross = Some(min_cross.map_or(d, |m| m.min(d)));
                if d < eps_collapse {
                    violations.push(Violation { i, j, distance: d });
                }
            } else {
                max_within = Some(max_within.map_or(d, |m| m.max(d)));
            }
        }
    }
    violations.sort_by(|a, b| a.distance.total_cmp(&b.distance).then((a.i, a.j).cmp(&(b.i, b.j))));
    let verdict = if violations.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(CollapseReport {
        pairs_checked,
        violations,
        min_cross_class_distance: min_cross,
        max_within_class_distance: max_within,
        verdict,
    })
}
