use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, seeded};

/// One resampling split. Both index lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    StratifiedKFold,
    MonteCarloCv,
}

/// A reproducible description of a resampling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    /// Number of folds (k-fold) or repeats (MCCV).
    pub count: usize,
    /// Held-out fraction; only used by MCCV.
    pub val_fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    pub fn kfold(k: usize, seed: u64) -> Self {
        SplitPlan {
            kind: SplitKind::StratifiedKFold,
            count: k,
            val_fraction: 1.0 / k.max(1) as f64,
            seed,
        }
    }

    pub fn mccv(repeats: usize, val_fraction: f64, seed: u64) -> Self {
        SplitPlan {
            kind: SplitKind::MonteCarloCv,
            count: repeats,
            val_fraction,
            seed,
        }
    }

    pub fn splits(&self, dataset: &Dataset) -> Result<Vec<Split>> {
        match self.kind {
            SplitKind::StratifiedKFold => stratified_kfold(dataset, self.count, self.seed),
            SplitKind::MonteCarloCv => mccv_splits(dataset, self.count, self.val_fraction, self.seed),
        }
    }
}

fn indices_by_class(labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    by_class
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut in_test = vec![false; n];
    for &i in test {
        in_test[i] = true;
    }
    (0..n).filter(|&i| !in_test[i]).collect()
}

/// Stratified K-fold partition.
///
/// Each class is shuffled and dealt round-robin over the folds. The dealing
/// position carries over from one class to the next, so classes with fewer
/// than `k` members still spread over distinct folds and fold sizes differ by
/// at most one.
pub fn stratified_kfold(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Split>> {
    let n = dataset.len();
    if k < 2 {
        return Err(invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(invalid(format!("k = {k} exceeds the {n} instances")));
    }
    let mut rng = seeded(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut members in indices_by_class(dataset.labels(), dataset.num_classes()) {
        members.shuffle(&mut rng);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    Ok(folds
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            Split {
                train: complement(n, &test),
                test,
            }
        })
        .collect())
}

/// Per-class held-out quotas summing to `total`, by largest remainder.
fn stratified_quotas(class_sizes: &[usize], fraction: f64, total: usize) -> Vec<usize> {
    let exact: Vec<f64> = class_sizes.iter().map(|&c| c as f64 * fraction).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = quotas.iter().sum();
    // Rounding `total` may ask for one more or one fewer than the floors give.
    for &c in order.iter().cycle().take(4 * class_sizes.len()) {
        if assigned >= total {
            break;
        }
        if quotas[c] < class_sizes[c] {
            quotas[c] += 1;
            assigned += 1;
        }
    }
    for &c in order.iter().rev().cycle().take(4 * class_sizes.len()) {
        if assigned <= total {
            break;
        }
        if quotas[c] > 0 {
            quotas[c] -= 1;
            assigned -= 1;
        }
    }
    quotas
}

/// Monte-Carlo cross-validation: `repeats` independent stratified
/// train/validation splits with `round(val_fraction * N)` validation rows.
pub fn mccv_splits(dataset: &Dataset, repeats: usize, val_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(invalid(format!("validation fraction {val_fraction} not in (0, 1)")));
    }
    if repeats == 0 {
        return Err(invalid("MCCV needs at least one repeat"));
    }
    let n = dataset.len();
    let n_val = (val_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(invalid(format!(
            "validation fraction {val_fraction} leaves an empty side on {n} instances"
        )));
    }
    let by_class = indices_by_class(dataset.labels(), dataset.num_classes());
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let quotas = stratified_quotas(&sizes, val_fraction, n_val);
    (0..repeats)
        .map(|r| {
            let mut rng = seeded(derive_seed(seed, r as u64));
            let mut test = Vec::with_capacity(n_val);
            for (members, &q) in by_class.iter().zip(&quotas) {
                let mut members = members.clone();
                members.shuffle(&mut rng);
                test.extend_from_slice(&members[..q]);
            }
            test.sort_unstable();
            Ok(Split {
                train: complement(n, &test),
                test,
            })
        })
        .collect()
}
