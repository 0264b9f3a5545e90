//! Neural estimation of the Donsker-Varadhan lower bound with a statistics
//! network on `(x, one-hot y)`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{log_sum_exp, Dataset, Split};
use crate::error::{invalid, Error, Result};
use crate::models::mlp::{Mlp, Optimizer, OptimizerKind};
use crate::models::search::NetSpace;
use crate::models::Standardizer;
use crate::rng::{derive_seed, seeded, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MineParams {
    pub hidden_layers: usize,
    pub units: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    /// Stop after this many epochs without a better training bound.
    pub patience: usize,
    /// Independently seeded networks whose estimates are averaged.
    pub ensemble: usize,
    /// Weight of the newest batch in the moving average of the partition
    /// term.
    pub ema_alpha: f64,
}

impl Default for MineParams {
    fn default() -> Self {
        MineParams {
            hidden_layers: 2,
            units: 32,
            learning_rate: 1e-3,
            l2: 0.0,
            optimizer: OptimizerKind::Adam,
            epochs: 10_000,
            patience: 500,
            ensemble: 10,
            ema_alpha: 0.01,
        }
    }
}

impl MineParams {
    pub fn validate(&self) -> Result<()> {
        if self.units == 0 || self.epochs == 0 || self.ensemble == 0 {
            return Err(invalid("units, epochs and ensemble must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.l2 >= 0.0) {
            return Err(invalid("learning rate must be positive and l2 non-negative"));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(invalid("moving-average weight must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Draw the network settings from `space`, keeping the training
    /// schedule of `self`.
    pub fn sample(&self, space: &NetSpace, rng: &mut Rng) -> MineParams {
        let n = space.sample(rng);
        MineParams {
            hidden_layers: n.hidden_layers,
            units: n.units,
            learning_rate: n.learning_rate,
            l2: n.l2,
            optimizer: n.optimizer,
            ..self.clone()
        }
    }
}

/// Number of batches per epoch: the largest divisor of `n` not above `n/32`.
pub fn batch_count(n: usize) -> usize {
    let cap = (n / 32).max(1);
    (1..=cap).rev().find(|b| n.is_multiple_of(*b)).unwrap_or(1)
}

/// A trained statistics network.
#[derive(Debug, Clone)]
pub struct StatNet {
    mlp: Mlp,
    scaler: Standardizer,
    num_classes: usize,
}

impl StatNet {
    fn input(&self, data: &Dataset, rows: &[(usize, usize)]) -> Vec<f64> {
        let x = self.scaler.transform(data.rows());
        encode(&x, data.n_features(), self.num_classes, rows)
    }

    /// `mean T(x_i, y_i) - ln mean exp T(x_i, y_perm(i))` in nats.
    pub fn lower_bound(&self, data: &Dataset, perm: &[usize]) -> f64 {
        let n = data.len();
        let mut rows: Vec<(usize, usize)> = (0..n).map(|i| (i, data.labels()[i])).collect();
        rows.extend((0..n).map(|i| (i, data.labels()[perm[i]])));
        let t = self.mlp.predict(&self.input(data, &rows));
        bound_from_outputs(&t, n)
    }
}

fn encode(x: &[f64], d: usize, m: usize, rows: &[(usize, usize)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * (d + m));
    for &(i, y) in rows {
        out.extend_from_slice(&x[i * d..(i + 1) * d]);
        out.extend((0..m).map(|k| f64::from(u8::from(k == y))));
    }
    out
}

/// First `n` outputs are joint pairs, the next `n` shuffled pairs.
fn bound_from_outputs(t: &[f64], n: usize) -> f64 {
    let joint = t[..n].iter().sum::<f64>() / n as f64;
    joint - (log_sum_exp(&t[n..]) - (n as f64).ln())
}

fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Train one statistics network on `data`.
pub fn train_stat_net(data: &Dataset, hp: &MineParams, seed: u64) -> Result<StatNet> {
    hp.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(invalid("MINE needs at least two samples"));
    }
    let d = data.n_features();
    let m = data.num_classes();
    let scaler = Standardizer::fit(data.rows());
    let x = scaler.transform(data.rows());
    let mut rng = seeded(seed);
    let mut sizes = vec![d + m];
    sizes.extend(std::iter::repeat_n(hp.units, hp.hidden_layers));
    sizes.push(1);
    let mut mlp = Mlp::new(sizes, &mut rng)?;
    let mut opt = Optimizer::new(hp.optimizer, hp.learning_rate, mlp.params().len());

    let labels = data.labels();
    let batches = batch_count(n);
    let bs = n / batches;
    let eval_perm = permutation(n, &mut rng);
    let mut eval_rows: Vec<(usize, usize)> = (0..n).map(|i| (i, labels[i])).collect();
    eval_rows.extend((0..n).map(|i| (i, labels[eval_perm[i]])));
    let eval_input = encode(&x, d, m, &eval_rows);

    let mut log_ma: Option<f64> = None;
    let (w_old, w_new) = ((1.0 - hp.ema_alpha).ln(), hp.ema_alpha.ln());
    let mut best = (f64::NEG_INFINITY, mlp.params().to_vec());
    let mut stale = 0;
    let mut rows = Vec::with_capacity(2 * bs);
    let mut d_out = vec![0.0; 2 * bs];
    for epoch in 0..hp.epochs {
        let order = permutation(n, &mut rng);
        let pi = permutation(n, &mut rng);
        for b in 0..batches {
            let idx = &order[b * bs..(b + 1) * bs];
            rows.clear();
            rows.extend(idx.iter().map(|&i| (i, labels[i])));
            rows.extend(idx.iter().map(|&i| (i, labels[pi[i]])));
            let trace = mlp.forward(&encode(&x, d, m, &rows));
            let t = trace.output();
            let lme = log_sum_exp(&t[bs..]) - (bs as f64).ln();
            let ma = match log_ma {
                None => lme,
                Some(prev) => log_sum_exp(&[w_old + prev, w_new + lme]),
            };
            log_ma = Some(ma);
            // ascend V: the partition term's gradient is divided by the
            // running average instead of the batch mean
            for k in 0..bs {
                d_out[k] = -1.0 / bs as f64;
                d_out[bs + k] = (t[bs + k] - ma).exp() / bs as f64;
            }
            if !ma.is_finite() || d_out.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!(
                    "statistics network blew up in epoch {epoch} (lr {})",
                    hp.learning_rate
                )));
            }
            let mut grad = mlp.backward(&trace, &d_out);
            mlp.add_weight_decay(&mut grad, hp.l2);
            opt.step(mlp.params_mut(), &grad);
        }
        let v = bound_from_outputs(&mlp.predict(&eval_input), n);
        if !v.is_finite() {
            return Err(Error::Diverged(format!("lower bound became {v} in epoch {epoch}")));
        }
        if v > best.0 + 1e-4 {
            best = (v, mlp.params().to_vec());
            stale = 0;
        } else {
            stale += 1;
            if stale >= hp.patience {
                break;
            }
        }
    }
    mlp.params_mut().copy_from_slice(&best.1);
    Ok(StatNet {
        mlp,
        scaler,
        num_classes: m,
    })
}

/// Train the ensemble on `train` and average the bound on `eval`, in bits.
/// Returns the per-member values as well.
pub fn mine_bits(train: &Dataset, eval: &Dataset, hp: &MineParams, seed: u64) -> Result<(f64, Vec<f64>)> {
    let members: Vec<Result<f64>> = (0..hp.ensemble)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(seed, k as u64);
            let net = train_stat_net(train, hp, s)?;
            let perm = permutation(eval.len(), &mut seeded(derive_seed(s, u64::MAX)));
            Ok(net.lower_bound(eval, &perm) * std::f64::consts::LOG2_E)
        })
        .collect();
    let values = members.into_iter().collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((mean, values))
}

/// Validation objective for MINE settings: on each split, one network is
/// trained on the training side and its bound evaluated on the validation
/// side under `repeats` shuffles; the score is `-mean + variance` (bits).
pub fn mine_split_scores(hp: &MineParams, data: &Dataset, splits: &[Split], repeats: usize, seed: u64) -> Result<Vec<f64>> {
    let single = MineParams {
        ensemble: 1,
        ..hp.clone()
    };
    let mut out = Vec::with_capacity(splits.len());
    for (j, split) in splits.iter().enumerate() {
        let s = derive_seed(seed, j as u64);
        let train = data.subset(&split.train);
        let val = data.subset(&split.test);
        let net = train_stat_net(&train, &single, s)?;
        let mut rng = seeded(derive_seed(s, 1));
        let v: Vec<f64> = (0..repeats.max(2))
            .map(|_| net.lower_bound(&val, &permutation(val.len(), &mut rng)) * std::f64::consts::LOG2_E)
            .collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        out.push(-mean + var);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_system, SynthConfig, Technique};

    fn quick() -> MineParams {
        MineParams {
            hidden_layers: 1,
            units: 16,
            learning_rate: 5e-3,
            epochs: 150,
            patience: 40,
            ensemble: 3,
            ..MineParams::default()
        }
    }

    #[test]
    fn batch_count_examples() {
        assert_eq!(batch_count(2000), 50);
        assert_eq!(batch_count(1400), 40);
        assert_eq!(batch_count(97), 1);
        assert_eq!(batch_count(10), 1);
        for n in [64, 100, 999, 4096] {
            let b = batch_count(n);
            assert_eq!(n % b, 0);
            assert!(n / b >= 32);
        }
    }

    #[test]
    fn bound_of_constant_network_is_zero() {
        let t = vec![0.7; 20];
        assert!(bound_from_outputs(&t, 10).abs() < 1e-12);
    }

    #[test]
    fn independent_labels_give_small_estimates() {
        let cfg = SynthConfig {
            samples_per_class_base: 200,
            ..SynthConfig::balanced(Technique::Perturbation, 2, 2, 1.0, 4)
        };
        let (d, _) = generate_system(&cfg).unwrap();
        let (v, members) = mine_bits(&d, &d, &quick(), 1).unwrap();
        assert_eq!(members.len(), 3);
        assert!(v.abs() <= 0.1, "{v}");
    }

    #[test]
    fn separated_classes_approach_label_entropy() {
        // one feature, classes six standard deviations apart
        let mut rng = seeded(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..600 {
            let c = i % 2;
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            x.push(6.0 * c as f64 + z);
            y.push(c);
        }
        let d = Dataset::new(x, 1, y, 2).unwrap();
        let hp = MineParams {
            epochs: 400,
            patience: 100,
            ..quick()
        };
        let (v, _) = mine_bits(&d, &d, &hp, 2).unwrap();
        // ground truth is within 0.003 bits of one bit here
        assert!((v - 1.0).abs() <= 0.15, "{v}");
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = SynthConfig {
            samples_per_class_base: 64,
            ..SynthConfig::balanced(Technique::Proximity, 2, 2, 0.3, 1)
        };
        let (d, _) = generate_system(&cfg).unwrap();
        let hp = MineParams {
            epochs: 20,
            ensemble: 2,
            ..quick()
        };
        assert_eq!(mine_bits(&d, &d, &hp, 7).unwrap(), mine_bits(&d, &d, &hp, 7).unwrap());
    }
}
