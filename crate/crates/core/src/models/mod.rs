//! Probabilistic classifiers, their hyperparameters and the search that
//! picks among them.

pub mod features;
pub mod gmm;
pub mod knn;
pub mod mlp;
pub mod search;

use serde::{Deserialize, Serialize};

use crate::data::{class_marginal, Dataset, ProbMatrix, Rows};
use crate::error::Result;

pub use features::{anova_f_scores, reduce_features, tree_importances};
pub use gmm::{fit_gmm, fit_gmm_aic, fit_gmm_bayes, CovarianceType, EmOptions, Gmm, GmmBayes, GmmParams};
pub use knn::{fit_knn, neighbor_counts, Knn, KnnParams};
pub use mlp::{fit_softmax_net, Head, Mlp, NetParams, Optimizer, OptimizerKind, SoftmaxNet};
pub use search::{portfolio_search, random_search, rank_configs, search_with, Objective, Ranked, SearchSpace};

/// A fitted model that maps feature rows to class probability vectors.
pub trait ProbClassifier: Send + Sync {
    fn num_classes(&self) -> usize;

    /// One probability row per input row.
    fn predict_proba(&self, x: Rows<'_>) -> ProbMatrix;

    /// Row-wise argmax of [`predict_proba`](Self::predict_proba), lowest index
    /// on ties.
    fn predict(&self, x: Rows<'_>) -> Vec<usize> {
        self.predict_proba(x).argmax_rows()
    }
}

/// Per-column centering and scaling learned from training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: Rows<'_>) -> Self {
        let d = x.n_cols();
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in x.iter() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in x.iter() {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        // constant columns keep unit scale
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(v, m)| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 * (1.0 + m.abs()) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: Rows<'_>) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len() * x.n_cols());
        for r in x.iter() {
            out.extend(r.iter().zip(self.mean.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) / s));
        }
        out
    }
}

/// Predicts the training class marginal for every input.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPredictor {
    marginal: Vec<f64>,
}

impl MarginalPredictor {
    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }
}

impl ProbClassifier for MarginalPredictor {
    fn num_classes(&self) -> usize {
        self.marginal.len()
    }

    fn predict_proba(&self, x: Rows<'_>) -> ProbMatrix {
        ProbMatrix::repeat(&self.marginal, x.len())
    }
}

pub fn fit_marginal_predictor(train: &Dataset) -> Result<MarginalPredictor> {
    Ok(MarginalPredictor {
        marginal: class_marginal(train)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SoftmaxNet,
    PcSoftmaxNet,
    GmmBayes,
    Knn,
    Marginal,
}

impl Family {
    /// The families searched when approximating the Bayes predictor.
    pub const PORTFOLIO: [Family; 4] = [Family::SoftmaxNet, Family::PcSoftmaxNet, Family::GmmBayes, Family::Knn];

    pub fn name(self) -> &'static str {
        match self {
            Family::SoftmaxNet => "softmax-net",
            Family::PcSoftmaxNet => "pc-softmax-net",
            Family::GmmBayes => "gmm-bayes",
            Family::Knn => "knn",
            Family::Marginal => "marginal",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Family::SoftmaxNet,
            Family::PcSoftmaxNet,
            Family::GmmBayes,
            Family::Knn,
            Family::Marginal,
        ]
        .into_iter()
        .find(|f| f.name() == s)
        .ok_or_else(|| crate::error::invalid(format!("unknown model family '{s}'")))
    }
}

/// A model family together with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Hyperparameters {
    SoftmaxNet(NetParams),
    PcSoftmaxNet(NetParams),
    GmmBayes(GmmParams),
    Knn(KnnParams),
    Marginal,
}

impl Hyperparameters {
    pub fn family(&self) -> Family {
        match self {
            Hyperparameters::SoftmaxNet(_) => Family::SoftmaxNet,
            Hyperparameters::PcSoftmaxNet(_) => Family::PcSoftmaxNet,
            Hyperparameters::GmmBayes(_) => Family::GmmBayes,
            Hyperparameters::Knn(_) => Family::Knn,
            Hyperparameters::Marginal => Family::Marginal,
        }
    }

    pub fn default_for(family: Family) -> Self {
        match family {
            Family::SoftmaxNet => Hyperparameters::SoftmaxNet(NetParams::default()),
            Family::PcSoftmaxNet => Hyperparameters::PcSoftmaxNet(NetParams::default()),
            Family::GmmBayes => Hyperparameters::GmmBayes(GmmParams::default()),
            Family::Knn => Hyperparameters::Knn(KnnParams::default()),
            Family::Marginal => Hyperparameters::Marginal,
        }
    }
}

/// A scored configuration from a hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub family: Family,
    pub hyperparameters: Hyperparameters,
    /// Mean validation objective; lower is better.
    pub score: f64,
    pub rank: usize,
    /// Seed the candidate was evaluated with; refits reuse it.
    pub seed: u64,
    pub fold_scores: Vec<f64>,
}

/// Fit any family on `train`.
pub fn fit_model(hp: &Hyperparameters, train: &Dataset, seed: u64) -> Result<Box<dyn ProbClassifier>> {
    Ok(match hp {
        Hyperparameters::SoftmaxNet(p) => Box::new(fit_softmax_net(train, p, Head::Softmax, seed)?),
        Hyperparameters::PcSoftmaxNet(p) => Box::new(fit_softmax_net(train, p, Head::PcSoftmax, seed)?),
        Hyperparameters::GmmBayes(p) => Box::new(fit_gmm_bayes(train, p, seed)?),
        Hyperparameters::Knn(p) => Box::new(fit_knn(train, p)?),
        Hyperparameters::Marginal => Box::new(fit_marginal_predictor(train)?),
    })
}
