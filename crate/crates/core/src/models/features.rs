//! Feature ranking and selection for wide datasets.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::rng::{seeded, Rng};

const ROUNDS: usize = 50;
const MAX_DEPTH: usize = 3;

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

fn grow(data: &Dataset, idx: &mut [usize], depth: usize, n_try: usize, rng: &mut Rng, imp: &mut [f64]) {
    let m = data.num_classes();
    let n = idx.len();
    if depth == MAX_DEPTH || n < 2 {
        return;
    }
    let mut counts = vec![0; m];
    for &i in idx.iter() {
        counts[data.labels()[i]] += 1;
    }
    let parent = gini(&counts, n);
    if parent == 0.0 {
        return;
    }
    let d = data.n_features();
    // (weighted impurity decrease, feature, threshold)
    let mut best: Option<(f64, usize, f64)> = None;
    let mut left = vec![0; m];
    for f in sample(rng, d, n_try.min(d)).into_iter() {
        idx.sort_by(|&a, &b| data.row(a)[f].total_cmp(&data.row(b)[f]));
        left.iter_mut().for_each(|c| *c = 0);
        for s in 0..n - 1 {
            let y = data.labels()[idx[s]];
            left[y] += 1;
            let (a, b) = (data.row(idx[s])[f], data.row(idx[s + 1])[f]);
            if a == b {
                continue;
            }
            let right: Vec<usize> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
            let nl = s + 1;
            let gain = n as f64 * parent - nl as f64 * gini(&left, nl) - (n - nl) as f64 * gini(&right, n - nl);
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, 0.5 * (a + b)));
            }
        }
    }
    let Some((gain, f, thr)) = best else { return };
    if gain <= 0.0 {
        return;
    }
    imp[f] += gain;
    idx.sort_by(|&a, &b| data.row(a)[f].total_cmp(&data.row(b)[f]));
    let split = idx.partition_point(|&i| data.row(i)[f] < thr);
    let (l, r) = idx.split_at_mut(split);
    grow(data, l, depth + 1, n_try, rng, imp);
    grow(data, r, depth + 1, n_try, rng, imp);
}

/// Total Gini decrease per feature over bootstrapped shallow trees.
pub fn tree_importances(data: &Dataset, seed: u64) -> Vec<f64> {
    let d = data.n_features();
    let n = data.len();
    let n_try = ((d as f64).sqrt().ceil() as usize).max(1);
    let mut rng = seeded(seed);
    let mut imp = vec![0.0; d];
    for _ in 0..ROUNDS {
        let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        grow(data, &mut idx, 0, n_try, &mut rng, &mut imp);
    }
    imp
}

/// One-way ANOVA F statistic of each feature against the class label.
pub fn anova_f_scores(data: &Dataset) -> Vec<f64> {
    let m = data.num_classes();
    let n = data.len();
    let counts = data.class_counts();
    let groups = counts.iter().filter(|&&c| c > 0).count();
    (0..data.n_features())
        .map(|f| {
            let mut sums = vec![0.0; m];
            let mut total = 0.0;
            for (r, &y) in data.rows().iter().zip(data.labels()) {
                sums[y] += r[f];
                total += r[f];
            }
            let grand = total / n as f64;
            let between: f64 = (0..m)
                .filter(|&c| counts[c] > 0)
                .map(|c| counts[c] as f64 * (sums[c] / counts[c] as f64 - grand).powi(2))
                .sum();
            let within: f64 = data
                .rows()
                .iter()
                .zip(data.labels())
                .map(|(r, &y)| (r[f] - sums[y] / counts[y] as f64).powi(2))
                .sum();
            if groups < 2 || n <= groups {
                return 0.0;
            }
            let b = between / (groups - 1) as f64;
            let w = within / (n - groups) as f64;
            if w > 0.0 {
                b / w
            } else if b > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect()
}

/// Keep the `target_d` most important columns, in their original order.
/// Ranks by tree importance, breaking ties (including the all-zero case)
/// by ANOVA F score and then column index. Returns the reduced data and the
/// kept column indices.
pub fn reduce_features(data: &Dataset, target_d: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    let d = data.n_features();
    if target_d == 0 || target_d > d {
        return Err(invalid(format!("target dimension {target_d} not in [1, {d}]")));
    }
    if target_d == d {
        return Ok((data.clone(), (0..d).collect()));
    }
    let imp = tree_importances(data, seed);
    let f = anova_f_scores(data);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(f[b].total_cmp(&f[a])).then(a.cmp(&b)));
    let mut keep = order[..target_d].to_vec();
    keep.sort_unstable();
    Ok((data.select_columns(&keep)?, keep))
}
