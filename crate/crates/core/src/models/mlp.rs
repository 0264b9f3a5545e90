//! A small fully connected ReLU network with a flat parameter vector, and the
//! softmax / PC-softmax classifiers built on it.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ProbClassifier, Standardizer};
use crate::data::{log_sum_exp, softmax_in_place, Dataset, ProbMatrix, Rows};
use crate::error::{invalid, Error, Result};
use crate::rng::{seeded, Rng};

/// Multi-layer perceptron: ReLU hidden layers, linear output layer.
///
/// Parameters are stored layer by layer as a row-major `out x in` weight
/// matrix followed by the `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations of every layer for one batch, input first.
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input")
    }
}

impl Mlp {
    /// He-initialized network; the output layer uses `1/fan_in` variance.
    pub fn new(sizes: Vec<usize>, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("bad layer sizes {sizes:?}")));
        }
        let mut params = Vec::with_capacity(Self::param_count(&sizes));
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == layers { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive sd");
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Mlp { sizes, params })
    }

    fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    /// Offsets of each layer's weights and the index just past its biases.
    fn layer_offsets(&self) -> Vec<(usize, usize, usize)> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let start = off;
                off += w[0] * w[1] + w[1];
                (start, start + w[0] * w[1], off)
            })
            .collect()
    }

    /// Forward pass over `n` row-major inputs.
    pub fn forward(&self, input: &[f64]) -> Trace {
        let n = input.len() / self.sizes[0];
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        let layers = self.sizes.len() - 1;
        for (l, (w0, b0, _)) in self.layer_offsets().into_iter().enumerate() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[w0..b0];
            let b = &self.params[b0..b0 + fan_out];
            let prev = &acts[l];
            let mut out = vec![0.0; n * fan_out];
            for i in 0..n {
                let x = &prev[i * fan_in..(i + 1) * fan_in];
                let row = &mut out[i * fan_out..(i + 1) * fan_out];
                for o in 0..fan_out {
                    let wr = &w[o * fan_in..(o + 1) * fan_in];
                    let mut s = b[o];
                    for k in 0..fan_in {
                        s += wr[k] * x[k];
                    }
                    row[o] = if l + 1 < layers { s.max(0.0) } else { s };
                }
            }
            acts.push(out);
        }
        Trace { acts }
    }

    /// Outputs only.
    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        let mut t = self.forward(input);
        t.acts.pop().expect("output layer")
    }

    /// Gradient of a loss with respect to the parameters, given the loss's
    /// gradient `d_out` with respect to the outputs of `trace`.
    pub fn backward(&self, trace: &Trace, d_out: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let n = trace.acts[0].len() / self.sizes[0];
        let offsets = self.layer_offsets();
        let mut delta = d_out.to_vec();
        for l in (0..self.sizes.len() - 1).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w0, b0, _) = offsets[l];
            let input = &trace.acts[l];
            {
                let (gw, gb) = grad[w0..b0 + fan_out].split_at_mut(b0 - w0);
                for i in 0..n {
                    let x = &input[i * fan_in..(i + 1) * fan_in];
                    let dr = &delta[i * fan_out..(i + 1) * fan_out];
                    for o in 0..fan_out {
                        let g = dr[o];
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                        for k in 0..fan_in {
                            row[k] += g * x[k];
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[w0..b0];
            let mut next = vec![0.0; n * fan_in];
            for i in 0..n {
                let dr = &delta[i * fan_out..(i + 1) * fan_out];
                let x = &input[i * fan_in..(i + 1) * fan_in];
                let nr = &mut next[i * fan_in..(i + 1) * fan_in];
                for o in 0..fan_out {
                    let g = dr[o];
                    if g == 0.0 {
                        continue;
                    }
                    let wr = &w[o * fan_in..(o + 1) * fan_in];
                    for k in 0..fan_in {
                        nr[k] += g * wr[k];
                    }
                }
                // ReLU derivative, read off the post-activation
                for k in 0..fan_in {
                    if x[k] <= 0.0 {
                        nr[k] = 0.0;
                    }
                }
            }
            delta = next;
        }
        grad
    }

    /// Add `l2 * w` to the weight gradients and return `l2/2 * |w|^2`.
    pub fn add_weight_decay(&self, grad: &mut [f64], l2: f64) -> f64 {
        if l2 == 0.0 {
            return 0.0;
        }
        let mut penalty = 0.0;
        for (w0, b0, _) in self.layer_offsets() {
            for i in w0..b0 {
                grad[i] += l2 * self.params[i];
                penalty += self.params[i] * self.params[i];
            }
        }
        0.5 * l2 * penalty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Rmsprop,
    Adam,
}

/// First-order optimizer state, minimizing.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        Optimizer {
            kind,
            lr,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                // heavy-ball momentum 0.9
                for ((p, g), m) in params.iter_mut().zip(grad).zip(self.m.iter_mut()) {
                    *m = 0.9 * *m + g;
                    *p -= self.lr * *m;
                }
            }
            OptimizerKind::Rmsprop => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(self.v.iter_mut()) {
                    *v = 0.9 * *v + 0.1 * g * g;
                    *p -= self.lr * g / (v.sqrt() + 1e-8);
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (0.9f64, 0.999f64);
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// Output layer of a classification network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Softmax,
    /// Prior-corrected softmax `q_m ∝ p_m exp(s_m)`, trained on `-ln q_y`.
    PcSoftmax,
    /// `exp(s_y) / sum_m exp(p_m s_m)`, trained on its negative log. The loss
    /// is unbounded below, so long training runs drift.
    PcSoftmaxPrinted,
}

/// Mean loss over a batch of logits and its gradient with respect to them.
pub fn head_loss(head: Head, log_prior: &[f64], logits: &[f64], labels: &[usize]) -> (f64, Vec<f64>) {
    let m = log_prior.len();
    let n = labels.len();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    let mut buf = vec![0.0; m];
    for (i, &y) in labels.iter().enumerate() {
        let s = &logits[i * m..(i + 1) * m];
        let g = &mut grad[i * m..(i + 1) * m];
        match head {
            Head::Softmax | Head::PcSoftmax => {
                for k in 0..m {
                    buf[k] = s[k] + if head == Head::PcSoftmax { log_prior[k] } else { 0.0 };
                }
                let lse = log_sum_exp(&buf);
                loss += lse - buf[y];
                for k in 0..m {
                    g[k] = (buf[k] - lse).exp() * inv_n;
                }
                g[y] -= inv_n;
            }
            Head::PcSoftmaxPrinted => {
                for k in 0..m {
                    buf[k] = log_prior[k].exp() * s[k];
                }
                let lse = log_sum_exp(&buf);
                loss += lse - s[y];
                for k in 0..m {
                    g[k] = log_prior[k].exp() * (buf[k] - lse).exp() * inv_n;
                }
                g[y] -= inv_n;
            }
        }
    }
    (loss * inv_n, grad)
}

/// Hyperparameters of the softmax and PC-softmax networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetParams {
    pub hidden_layers: usize,
    pub units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub l2: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

impl Default for NetParams {
    fn default() -> Self {
        NetParams {
            hidden_layers: 1,
            units: 32,
            learning_rate: 1e-2,
            epochs: 40,
            batch_size: 64,
            l2: 1e-4,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl NetParams {
    pub fn validate(&self) -> Result<()> {
        if self.units == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("units, epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.l2 >= 0.0) {
            return Err(invalid("l2 must be non-negative"));
        }
        Ok(())
    }

    fn layer_sizes(&self, d: usize, m: usize) -> Vec<usize> {
        let mut sizes = vec![d];
        sizes.extend(std::iter::repeat_n(self.units, self.hidden_layers));
        sizes.push(m);
        sizes
    }
}

/// A trained softmax or PC-softmax classification network.
#[derive(Debug, Clone)]
pub struct SoftmaxNet {
    mlp: Mlp,
    scaler: Standardizer,
    head: Head,
    log_prior: Vec<f64>,
}

pub(crate) fn log_prior(prior: &[f64]) -> Vec<f64> {
    prior.iter().map(|p| p.max(1e-12).ln()).collect()
}

impl SoftmaxNet {
    pub fn head(&self) -> Head {
        self.head
    }

    pub fn prior(&self) -> Vec<f64> {
        self.log_prior.iter().map(|l| l.exp()).collect()
    }

    /// Raw class scores `s` for each row.
    pub fn scores(&self, x: Rows<'_>) -> Vec<f64> {
        self.mlp.predict(&self.scaler.transform(x))
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }
}

impl ProbClassifier for SoftmaxNet {
    fn num_classes(&self) -> usize {
        self.log_prior.len()
    }

    fn predict_proba(&self, x: Rows<'_>) -> ProbMatrix {
        let mut s = self.scores(x);
        let m = self.log_prior.len();
        if self.head == Head::PcSoftmax {
            for row in s.chunks_exact_mut(m) {
                for (v, lp) in row.iter_mut().zip(&self.log_prior) {
                    *v += lp;
                }
            }
        }
        for row in s.chunks_exact_mut(m) {
            softmax_in_place(row);
        }
        ProbMatrix::from_weights(s, m)
    }
}

/// Loss and gradient of a network on one batch (standardization not
/// applied), including weight decay.
pub fn loss_and_grad(mlp: &Mlp, head: Head, prior: &[f64], l2: f64, x: &[f64], labels: &[usize]) -> (f64, Vec<f64>) {
    let trace = mlp.forward(x);
    let (loss, d_out) = head_loss(head, &log_prior(prior), trace.output(), labels);
    let mut grad = mlp.backward(&trace, &d_out);
    let penalty = mlp.add_weight_decay(&mut grad, l2);
    (loss + penalty, grad)
}

/// Train a classification network with mini-batch gradient descent.
pub fn fit_softmax_net(train: &Dataset, hp: &NetParams, head: Head, seed: u64) -> Result<SoftmaxNet> {
    hp.validate()?;
    let m = train.num_classes();
    let prior = crate::data::class_marginal(train)?;
    let lp = log_prior(&prior);
    let scaler = Standardizer::fit(train.rows());
    let x = scaler.transform(train.rows());
    let d = train.n_features();
    let mut rng = seeded(seed);
    let mut mlp = Mlp::new(hp.layer_sizes(d, m), &mut rng)?;
    let mut opt = Optimizer::new(hp.optimizer, hp.learning_rate, mlp.params().len());

    let n = train.len();
    let bs = hp.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut xb = Vec::with_capacity(bs * d);
    let mut yb = Vec::with_capacity(bs);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&x[i * d..(i + 1) * d]);
                yb.push(train.labels()[i]);
            }
            let trace = mlp.forward(&xb);
            let (loss, d_out) = head_loss(head, &lp, trace.output(), &yb);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "{head:?} network loss became {loss} in epoch {epoch} (lr {})",
                    hp.learning_rate
                )));
            }
            let mut grad = mlp.backward(&trace, &d_out);
            mlp.add_weight_decay(&mut grad, hp.l2);
            opt.step(mlp.params_mut(), &grad);
        }
    }
    if mlp.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Diverged("network weights became non-finite".into()));
    }
    Ok(SoftmaxNet {
        mlp,
        scaler,
        head,
        log_prior: lp,
    })
}
