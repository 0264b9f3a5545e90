//! Datasets, resampling splits and classification metrics.

mod io;
mod metrics;
mod split;

pub use io::{read_csv, read_csv_from, read_csv_with_meta, sidecar_path, write_csv, DatasetMeta, LabelColumn};
pub use metrics::{classification_metrics, confusion_matrix, ClassificationMetrics, ConfusionMatrix};
pub use split::{mccv_splits, stratified_kfold, Split, SplitKind, SplitPlan};

use crate::error::{invalid, Error, Result};

/// Row-major view over a feature matrix.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    data: &'a [f64],
    n_cols: usize,
}

impl<'a> Rows<'a> {
    pub fn new(data: &'a [f64], n_cols: usize) -> Self {
        assert!(n_cols > 0, "feature matrix needs at least one column");
        assert_eq!(data.len() % n_cols, 0, "ragged feature matrix");
        Rows { data, n_cols }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.data
    }
}

/// An immutable `N x d` feature matrix with integer labels in `[0, M)`.
///
/// Labels are contiguous after ingestion; the original class names are kept
/// in [`Dataset::class_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    num_classes: usize,
    class_names: Vec<String>,
}

impl Dataset {
    /// Build a dataset from a row-major feature buffer.
    pub fn new(features: Vec<f64>, n_features: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if num_classes < 2 {
            return Err(invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        if labels.len() < num_classes {
            return Err(invalid(format!(
                "dataset has {} rows but {} classes",
                labels.len(),
                num_classes
            )));
        }
        let ds = Self::unchecked(features, n_features, labels, num_classes)?;
        Ok(ds)
    }

    /// Validation shared by [`Dataset::new`] and subsets; subsets may be
    /// smaller than the number of classes.
    fn unchecked(features: Vec<f64>, n_features: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if n_features == 0 {
            return Err(invalid("dataset needs at least one feature"));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: labels.len() * n_features,
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite feature at row {}, column {}",
                pos / n_features,
                pos % n_features
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        let class_names = (0..num_classes).map(|m| m.to_string()).collect();
        Ok(Dataset {
            features,
            n_features,
            labels,
            num_classes,
            class_names,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n_features = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n_features) {
            return Err(invalid("rows have differing lengths"));
        }
        Self::new(rows.concat(), n_features, labels, num_classes)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            return Err(Error::LengthMismatch {
                left: names.len(),
                right: self.num_classes,
            });
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn rows(&self) -> Rows<'_> {
        Rows::new(&self.features, self.n_features)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `idx`, in that order. The class count is preserved even when
    /// some classes are absent from the subset.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.n_features);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            n_features: self.n_features,
            labels,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }

    /// Keep only the columns in `cols`, in that order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Dataset> {
        if cols.is_empty() {
            return Err(invalid("column selection is empty"));
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= self.n_features) {
            return Err(invalid(format!("column {c} out of range")));
        }
        let mut features = Vec::with_capacity(self.len() * cols.len());
        for row in self.rows().iter() {
            features.extend(cols.iter().map(|&c| row[c]));
        }
        Ok(Dataset {
            features,
            n_features: cols.len(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        })
    }

    /// Same features, different labels (used by the label-permutation code in MINE
    /// and by tests).
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        if labels.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: self.len(),
            });
        }
        let mut ds = Self::unchecked(self.features.clone(), self.n_features, labels, self.num_classes)?;
        ds.class_names = self.class_names.clone();
        Ok(ds)
    }
}

/// An `N x M` row-stochastic matrix of predicted class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    data: Vec<f64>,
    n_classes: usize,
}

/// Tolerance on row sums accepted by [`ProbMatrix::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Clip bound applied before any logarithm of a predicted probability.
pub const PROB_CLIP: f64 = 1e-9;

impl ProbMatrix {
    pub fn new(data: Vec<f64>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 || !data.len().is_multiple_of(n_classes) {
            return Err(invalid("probability buffer is not a multiple of the class count"));
        }
        for (i, row) in data.chunks_exact(n_classes).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0 + SIMPLEX_TOL).contains(p)) {
                return Err(invalid(format!("row {i} has an entry outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(invalid(format!("row {i} sums to {s}")));
            }
        }
        Ok(ProbMatrix { data, n_classes })
    }

    /// Normalize non-negative weights row by row. Rows with zero mass become
    /// uniform.
    pub fn from_weights(mut data: Vec<f64>, n_classes: usize) -> Self {
        assert!(n_classes > 0 && data.len().is_multiple_of(n_classes));
        for row in data.chunks_exact_mut(n_classes) {
            normalize_in_place(row);
        }
        ProbMatrix { data, n_classes }
    }

    /// Row-wise softmax of scores.
    pub fn from_log_weights(mut data: Vec<f64>, n_classes: usize) -> Self {
        assert!(n_classes > 0 && data.len().is_multiple_of(n_classes));
        for row in data.chunks_exact_mut(n_classes) {
            softmax_in_place(row);
        }
        ProbMatrix { data, n_classes }
    }

    /// `n` copies of the same probability vector.
    pub fn repeat(row: &[f64], n: usize) -> Self {
        let mut data = Vec::with_capacity(row.len() * n);
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        ProbMatrix {
            data,
            n_classes: row.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n_classes
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Row-wise argmax, smallest index on ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }

    /// Clip every entry to `[eps, 1 - eps]` and renormalize.
    pub fn clipped(&self, eps: f64) -> ProbMatrix {
        let data = self.data.iter().map(|p| p.clamp(eps, 1.0 - eps)).collect();
        ProbMatrix::from_weights(data, self.n_classes)
    }
}

/// Index of the largest entry; the smallest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (m, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = m;
        }
    }
    best
}

pub(crate) fn normalize_in_place(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    if s > 0.0 && s.is_finite() {
        row.iter_mut().for_each(|p| *p /= s);
    } else {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|p| *p = u);
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|p| *p = u);
        return;
    }
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    row.iter_mut().for_each(|p| *p /= s);
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Fraction of instances in each class.
pub fn class_marginal(dataset: &Dataset) -> Result<Vec<f64>> {
    marginal_of_labels(dataset.labels(), dataset.num_classes())
}

pub(crate) fn marginal_of_labels(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let mut p = vec![0.0; num_classes];
    for &y in labels {
        p[y] += 1.0;
    }
    let n = labels.len() as f64;
    p.iter_mut().for_each(|v| *v /= n);
    Ok(p)
}

/// Shannon entropy in bits, with `0 lg 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0)) {
        return Err(invalid(format!("negative or NaN probability {v}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("probabilities sum to {s}")));
    }
    Ok(entropy_unchecked(p))
}

pub(crate) fn entropy_unchecked(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
    h.max(0.0)
}
