//! Random hyperparameter search scored by Monte-Carlo cross-validation.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_gmm_bayes, fit_model, CovarianceType, Family, GmmParams, Hyperparameters, KnnParams, ModelCandidate, NetParams, OptimizerKind};
use crate::data::{classification_metrics, confusion_matrix, Dataset, Split, SplitPlan};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

/// Validation objective; every objective is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Balanced error rate on the validation side of each split.
    Ber,
    /// AIC of a class-conditional mixture on the training side of each split.
    Aic,
    /// Variance-penalized lower bound; only meaningful for MINE, whose
    /// search supplies its own scorer through [`search_with`].
    MseProxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpace {
    pub hidden_layers: [usize; 2],
    pub units: [usize; 2],
    pub learning_rate: [f64; 2],
    pub l2: [f64; 2],
    pub epochs: [usize; 2],
    pub batch_size: [usize; 2],
    pub optimizers: Vec<OptimizerKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSpace {
    pub components: [usize; 2],
    pub covariances: Vec<CovarianceType>,
    pub reg: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnSpace {
    pub k: [usize; 2],
}

/// Ranges sampled by the search. Integer ranges are inclusive; `units`,
/// `k`, learning rates and penalties are drawn log-uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub families: Vec<Family>,
    pub net: NetSpace,
    pub pc_net: NetSpace,
    pub gmm: GmmSpace,
    pub knn: KnnSpace,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace::desk()
    }
}

impl SearchSpace {
    /// Small networks and short training, sized for a single CPU core.
    pub fn desk() -> Self {
        let net = NetSpace {
            hidden_layers: [0, 2],
            units: [8, 64],
            learning_rate: [1e-3, 3e-2],
            l2: [1e-6, 1e-2],
            epochs: [20, 60],
            batch_size: [32, 128],
            optimizers: vec![OptimizerKind::Adam],
        };
        SearchSpace {
            families: Family::PORTFOLIO.to_vec(),
            pc_net: net.clone(),
            net,
            gmm: GmmSpace {
                components: [1, 3],
                covariances: vec![
                    CovarianceType::Full,
                    CovarianceType::Diag,
                    CovarianceType::Tied,
                    CovarianceType::Spherical,
                ],
                reg: [1e-6, 1e-2],
            },
            knn: KnnSpace { k: [1, 50] },
        }
    }

    /// The wide ranges used for full-scale runs.
    pub fn wide() -> Self {
        let pc = NetSpace {
            hidden_layers: [1, 50],
            units: [2, 256],
            learning_rate: [1e-5, 1e-1],
            l2: [1e-10, 0.2],
            epochs: [20, 200],
            batch_size: [16, 256],
            optimizers: vec![OptimizerKind::Rmsprop, OptimizerKind::Sgd, OptimizerKind::Adam],
        };
        SearchSpace {
            families: Family::PORTFOLIO.to_vec(),
            net: NetSpace {
                hidden_layers: [2, 20],
                units: [8, 256],
                ..pc.clone()
            },
            pc_net: pc,
            gmm: GmmSpace {
                components: [1, 10],
                covariances: vec![
                    CovarianceType::Full,
                    CovarianceType::Diag,
                    CovarianceType::Tied,
                    CovarianceType::Spherical,
                ],
                reg: [1e-10, 1e-1],
            },
            knn: KnnSpace { k: [1, 100] },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let int_ok = |r: [usize; 2]| r[0] <= r[1];
        let pos_ok = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        for n in [&self.net, &self.pc_net] {
            if !(int_ok(n.hidden_layers) && int_ok(n.units) && int_ok(n.epochs) && int_ok(n.batch_size))
                || n.units[0] == 0
                || n.epochs[0] == 0
                || n.batch_size[0] == 0
                || !pos_ok(n.learning_rate)
                || !pos_ok(n.l2)
                || n.optimizers.is_empty()
            {
                return Err(invalid("network search ranges are malformed"));
            }
        }
        if !int_ok(self.gmm.components) || self.gmm.components[0] == 0 || self.gmm.components[1] > 10 || !pos_ok(self.gmm.reg) || self.gmm.covariances.is_empty() {
            return Err(invalid("mixture search ranges are malformed"));
        }
        if !int_ok(self.knn.k) || self.knn.k[0] == 0 {
            return Err(invalid("k-NN search range is malformed"));
        }
        if self.families.is_empty() {
            return Err(invalid("search space lists no families"));
        }
        Ok(())
    }

    /// Draw one configuration of `family`.
    pub fn sample(&self, family: Family, rng: &mut Rng) -> Hyperparameters {
        match family {
            Family::SoftmaxNet => Hyperparameters::SoftmaxNet(sample_net(&self.net, rng)),
            Family::PcSoftmaxNet => Hyperparameters::PcSoftmaxNet(sample_net(&self.pc_net, rng)),
            Family::GmmBayes => Hyperparameters::GmmBayes(GmmParams {
                components: rng.random_range(self.gmm.components[0]..=self.gmm.components[1]),
                covariance: self.gmm.covariances[rng.random_range(0..self.gmm.covariances.len())],
                reg: log_uniform(self.gmm.reg, rng),
            }),
            Family::Knn => Hyperparameters::Knn(KnnParams {
                k: log_uniform_int(self.knn.k, rng),
                alpha: 1.0,
            }),
            Family::Marginal => Hyperparameters::Marginal,
        }
    }
}

fn log_uniform(r: [f64; 2], rng: &mut Rng) -> f64 {
    if r[0] == r[1] {
        return r[0];
    }
    (r[0].ln() + rng.random::<f64>() * (r[1].ln() - r[0].ln())).exp()
}

fn log_uniform_int(r: [usize; 2], rng: &mut Rng) -> usize {
    let v = log_uniform([r[0] as f64, r[1] as f64 + 1.0], rng).floor() as usize;
    v.clamp(r[0], r[1])
}

impl NetSpace {
    pub fn sample(&self, rng: &mut Rng) -> NetParams {
        sample_net(self, rng)
    }
}

fn sample_net(s: &NetSpace, rng: &mut Rng) -> NetParams {
    NetParams {
        hidden_layers: rng.random_range(s.hidden_layers[0]..=s.hidden_layers[1]),
        units: log_uniform_int(s.units, rng),
        learning_rate: log_uniform(s.learning_rate, rng),
        epochs: rng.random_range(s.epochs[0]..=s.epochs[1]),
        batch_size: log_uniform_int(s.batch_size, rng),
        l2: log_uniform(s.l2, rng),
        optimizer: s.optimizers[rng.random_range(0..s.optimizers.len())],
    }
}

/// Score one configuration on each split; returns the per-split values.
pub fn split_scores(hp: &Hyperparameters, data: &Dataset, splits: &[Split], objective: Objective, seed: u64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(splits.len());
    for (j, split) in splits.iter().enumerate() {
        let train = data.subset(&split.train);
        let fit_seed = derive_seed(seed, j as u64);
        let score = match objective {
            Objective::Ber => {
                let val = data.subset(&split.test);
                let model = fit_model(hp, &train, fit_seed)?;
                let cm = confusion_matrix(val.labels(), &model.predict(val.rows()), data.num_classes())?;
                classification_metrics(&cm)?.ber
            }
            Objective::Aic => match hp {
                Hyperparameters::GmmBayes(p) => fit_gmm_bayes(&train, p, fit_seed)?.aic(&train),
                _ => return Err(invalid(format!("AIC is only defined for mixtures, not {}", hp.family()))),
            },
            Objective::MseProxy => {
                return Err(invalid("the MSE proxy objective needs a statistics-network scorer"));
            }
        };
        out.push(score);
    }
    Ok(out)
}

/// A scored configuration of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked<T> {
    pub config: T,
    pub score: f64,
    pub rank: usize,
    pub seed: u64,
    pub fold_scores: Vec<f64>,
}

/// Evaluate configurations with `scorer(config, seed) -> per-split scores`
/// and rank them by mean score, keeping sampling order among equal scores.
/// Configuration `i` gets seed `derive_seed(seed, i)`. Failed
/// configurations are dropped; if all fail the failures are reported.
pub fn rank_configs<T, F>(configs: Vec<T>, seed: u64, scorer: F) -> Result<Vec<Ranked<T>>>
where
    T: Send + std::fmt::Debug,
    F: Fn(&T, u64) -> Result<Vec<f64>> + Sync,
{
    if configs.is_empty() {
        return Err(invalid("search budget must be at least 1"));
    }
    let count = configs.len();
    let results: Vec<(T, u64, Result<Vec<f64>>)> = configs
        .into_par_iter()
        .enumerate()
        .map(|(i, c)| {
            let s = derive_seed(seed, i as u64);
            let r = scorer(&c, s);
            (c, s, r)
        })
        .collect();
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (i, (config, s, r)) in results.into_iter().enumerate() {
        match r {
            Ok(fold_scores) => {
                let score = fold_scores.iter().sum::<f64>() / fold_scores.len().max(1) as f64;
                if fold_scores.is_empty() || !score.is_finite() {
                    failures.push(format!("#{i}: non-finite score"));
                    continue;
                }
                ok.push(Ranked {
                    config,
                    score,
                    rank: 0,
                    seed: s,
                    fold_scores,
                });
            }
            Err(e) => failures.push(format!("#{i}: {e}")),
        }
    }
    if ok.is_empty() {
        return Err(Error::AllCandidatesFailed {
            count,
            failures: failures.join("; "),
        });
    }
    ok.sort_by(|a, b| a.score.total_cmp(&b.score));
    for (rank, c) in ok.iter_mut().enumerate() {
        c.rank = rank;
    }
    Ok(ok)
}

/// [`rank_configs`] over model hyperparameters.
pub fn search_with<F>(hps: Vec<Hyperparameters>, seed: u64, scorer: F) -> Result<Vec<ModelCandidate>>
where
    F: Fn(&Hyperparameters, u64) -> Result<Vec<f64>> + Sync,
{
    Ok(rank_configs(hps, seed, scorer)?
        .into_iter()
        .map(|r| ModelCandidate {
            family: r.config.family(),
            hyperparameters: r.config,
            score: r.score,
            rank: r.rank,
            seed: r.seed,
            fold_scores: r.fold_scores,
        })
        .collect())
}

/// Sample `budget` configurations of one family and rank them.
pub fn random_search(
    family: Family,
    space: &SearchSpace,
    budget: usize,
    objective: Objective,
    plan: &SplitPlan,
    data: &Dataset,
    seed: u64,
) -> Result<Vec<ModelCandidate>> {
    space.validate()?;
    if budget == 0 {
        return Err(invalid("search budget must be at least 1"));
    }
    let mut rng = seeded(seed);
    let hps: Vec<_> = (0..budget).map(|_| space.sample(family, &mut rng)).collect();
    let splits = plan.splits(data)?;
    search_with(hps, seed, |hp, s| split_scores(hp, data, &splits, objective, s))
}

/// Split `budget` across the space's families (earlier families take the
/// remainder) and rank everything together by balanced error.
pub fn portfolio_search(space: &SearchSpace, budget: usize, plan: &SplitPlan, data: &Dataset, seed: u64) -> Result<Vec<ModelCandidate>> {
    space.validate()?;
    if budget == 0 {
        return Err(invalid("search budget must be at least 1"));
    }
    let nf = space.families.len();
    let mut rng = seeded(seed);
    let mut hps = Vec::with_capacity(budget);
    for (i, &family) in space.families.iter().enumerate() {
        let share = budget / nf + usize::from(i < budget % nf);
        hps.extend((0..share).map(|_| space.sample(family, &mut rng)));
    }
    let splits = plan.splits(data)?;
    search_with(hps, seed, |hp, s| split_scores(hp, data, &splits, Objective::Ber, s))
}
