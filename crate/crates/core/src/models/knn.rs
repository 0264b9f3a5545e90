//! Brute-force k-nearest-neighbour classifier with smoothed vote shares.

use serde::{Deserialize, Serialize};

use super::ProbClassifier;
use crate::data::{Dataset, ProbMatrix, Rows};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
    /// Additive smoothing per class.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k: 15, alpha: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Knn {
    train: Dataset,
    k: usize,
    alpha: f64,
}

impl Knn {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Class counts among the `k` nearest training rows of each query.
    pub fn counts(&self, x: Rows<'_>) -> Vec<Vec<usize>> {
        x.iter().map(|q| neighbor_counts(&self.train, q, self.k)).collect()
    }
}

/// Class counts among the `k` training rows closest to `query` in
/// Euclidean distance; equal distances go to the lower row index.
pub fn neighbor_counts(train: &Dataset, query: &[f64], k: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = train
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let k = k.min(dist.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k, cmp);
    }
    let mut counts = vec![0; train.num_classes()];
    for &(_, i) in &dist[..k] {
        counts[train.labels()[i]] += 1;
    }
    counts
}

impl ProbClassifier for Knn {
    fn num_classes(&self) -> usize {
        self.train.num_classes()
    }

    fn predict_proba(&self, x: Rows<'_>) -> ProbMatrix {
        let m = self.train.num_classes();
        let denom = self.k as f64 + self.alpha * m as f64;
        let mut out = Vec::with_capacity(x.len() * m);
        for c in self.counts(x) {
            out.extend(c.iter().map(|&v| (v as f64 + self.alpha) / denom));
        }
        ProbMatrix::from_weights(out, m)
    }
}

/// Store the training set. `k` larger than the training set is clamped.
pub fn fit_knn(train: &Dataset, hp: &KnnParams) -> Result<Knn> {
    if hp.k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if !(hp.alpha >= 0.0 && hp.alpha.is_finite()) {
        return Err(invalid("smoothing must be finite and non-negative"));
    }
    if train.is_empty() {
        return Err(invalid("k-NN needs training rows"));
    }
    Ok(Knn {
        train: train.clone(),
        k: hp.k.min(train.len()),
        alpha: hp.alpha,
    })
}
