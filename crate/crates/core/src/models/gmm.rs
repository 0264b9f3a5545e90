//! Gaussian mixtures fitted by EM, and a Bayes classifier built from one
//! mixture per class.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ProbClassifier;
use crate::data::{class_marginal, log_sum_exp, softmax_in_place, Dataset, ProbMatrix, Rows};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceType {
    Full,
    Diag,
    Tied,
    Spherical,
}

/// EM restarts before a degenerate fit is reported as an error.
pub const MAX_RESTARTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop when the mean per-sample log-likelihood improves by less.
    pub tol: f64,
    /// Ridge added to every covariance diagonal.
    pub reg: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 200,
            tol: 1e-6,
            reg: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `-0.5 (d ln 2 pi + ln det Sigma) + ln weight`
    log_norm: f64,
}

/// A fitted Gaussian mixture.
#[derive(Debug, Clone)]
pub struct Gmm {
    components: Vec<Component>,
    cov_type: CovarianceType,
    dims: usize,
    /// Total training log-likelihood after each EM iteration.
    pub trace: Vec<f64>,
    /// Total log-likelihood of the training data at the returned parameters.
    pub log_likelihood: f64,
    pub n_train: usize,
}

impl Gmm {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn covariance_type(&self) -> CovarianceType {
        self.cov_type
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.iter().cloned().collect()).collect()
    }

    /// Free parameters: mixing weights, means and covariance entries.
    pub fn n_parameters(&self) -> usize {
        free_parameters(self.components.len(), self.dims, self.cov_type)
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut terms: Vec<f64> = Vec::with_capacity(self.components.len());
        for c in &self.components {
            terms.push(component_log_pdf(c, x));
        }
        log_sum_exp(&terms)
    }

    pub fn total_log_likelihood(&self, x: Rows<'_>) -> f64 {
        x.iter().map(|r| self.log_pdf(r)).sum()
    }

    /// `-2 ln L + 2 F` on the training data.
    pub fn aic(&self) -> f64 {
        -2.0 * self.log_likelihood + 2.0 * self.n_parameters() as f64
    }
}

pub fn free_parameters(k: usize, d: usize, cov: CovarianceType) -> usize {
    let cov_params = match cov {
        CovarianceType::Full => k * d * (d + 1) / 2,
        CovarianceType::Diag => k * d,
        CovarianceType::Tied => d * (d + 1) / 2,
        CovarianceType::Spherical => k,
    };
    (k - 1) + k * d + cov_params
}

fn component_log_pdf(c: &Component, x: &[f64]) -> f64 {
    let diff = DVector::from_iterator(x.len(), x.iter().zip(c.mean.iter()).map(|(a, b)| a - b));
    let z = c
        .chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .expect("Cholesky factor has a non-zero diagonal");
    c.log_norm - 0.5 * z.norm_squared()
}

fn build_component(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Option<Component> {
    let d = mean.len();
    let chol = Cholesky::new(cov)?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return None;
    }
    let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det) + weight.ln();
    Some(Component {
        weight,
        mean,
        chol,
        log_norm,
    })
}

/// k-means++ seeding followed by a few Lloyd iterations; returns hard
/// assignments.
fn kmeans_init(x: Rows<'_>, k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = x.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    let mut centers: Vec<Vec<f64>> = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut dist: Vec<f64> = x.iter().map(|r| sq(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(x.row(next).to_vec());
        for (i, r) in x.iter().enumerate() {
            dist[i] = dist[i].min(sq(r, centers.last().expect("just pushed")));
        }
    }
    let d = x.n_cols();
    let mut assign = vec![0; n];
    for _ in 0..10 {
        for (i, r) in x.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let dd = sq(r, center);
                if dd < best.0 {
                    best = (dd, c);
                }
            }
            assign[i] = best.1;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in x.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    assign
}

/// M-step from responsibilities `resp` (`n x k`, row-major).
fn m_step(x: Rows<'_>, resp: &[f64], k: usize, cov_type: CovarianceType, reg: f64) -> std::result::Result<Vec<Component>, String> {
    let n = x.len();
    let d = x.n_cols();
    let nk: Vec<f64> = (0..k).map(|c| (0..n).map(|i| resp[i * k + c]).sum()).collect();
    if let Some(c) = nk.iter().position(|&v| v < 1e-8 * n as f64 || v < 1e-10) {
        return Err(format!("component {c} lost its responsibility mass"));
    }
    let mut means = Vec::with_capacity(k);
    for c in 0..k {
        let mut mu = DVector::zeros(d);
        for (i, r) in x.iter().enumerate() {
            let w = resp[i * k + c];
            for j in 0..d {
                mu[j] += w * r[j];
            }
        }
        means.push(mu / nk[c]);
    }
    let scatter = |c: usize| {
        let mut s = DMatrix::zeros(d, d);
        for (i, r) in x.iter().enumerate() {
            let w = resp[i * k + c];
            if w == 0.0 {
                continue;
            }
            for a in 0..d {
                let da = r[a] - means[c][a];
                for b in a..d {
                    s[(a, b)] += w * da * (r[b] - means[c][b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                s[(a, b)] = s[(b, a)];
            }
        }
        s
    };
    let ridge = DMatrix::identity(d, d) * reg;
    let covs: Vec<DMatrix<f64>> = match cov_type {
        CovarianceType::Full => (0..k).map(|c| scatter(c) / nk[c] + &ridge).collect(),
        CovarianceType::Diag => (0..k)
            .map(|c| DMatrix::from_diagonal(&(scatter(c) / nk[c]).diagonal()) + &ridge)
            .collect(),
        CovarianceType::Spherical => (0..k)
            .map(|c| {
                let var = (scatter(c) / nk[c]).trace() / d as f64;
                DMatrix::identity(d, d) * var + &ridge
            })
            .collect(),
        CovarianceType::Tied => {
            let mut s = DMatrix::zeros(d, d);
            for c in 0..k {
                s += scatter(c);
            }
            let shared = s / n as f64 + &ridge;
            vec![shared; k]
        }
    };
    let mut comps = Vec::with_capacity(k);
    for (c, (mu, cov)) in means.into_iter().zip(covs).enumerate() {
        let comp = build_component(nk[c] / n as f64, mu, cov)
            .ok_or_else(|| format!("component {c} has a singular covariance"))?;
        comps.push(comp);
    }
    Ok(comps)
}

/// E-step: responsibilities and total log-likelihood.
fn e_step(x: Rows<'_>, comps: &[Component], resp: &mut [f64]) -> f64 {
    let k = comps.len();
    let mut total = 0.0;
    for (i, r) in x.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        for (c, comp) in comps.iter().enumerate() {
            row[c] = component_log_pdf(comp, r);
        }
        total += log_sum_exp(row);
        softmax_in_place(row);
    }
    total
}

fn em_once(x: Rows<'_>, k: usize, cov_type: CovarianceType, opts: &EmOptions, rng: &mut Rng) -> std::result::Result<Gmm, String> {
    let n = x.len();
    let assign = kmeans_init(x, k, rng);
    let mut resp = vec![0.0; n * k];
    for (i, &a) in assign.iter().enumerate() {
        resp[i * k + a] = 1.0;
    }
    let mut comps = m_step(x, &resp, k, cov_type, opts.reg)?;
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..opts.max_iter {
        let ll = e_step(x, &comps, &mut resp);
        if !ll.is_finite() {
            return Err("log-likelihood is not finite".into());
        }
        trace.push(ll);
        if (ll - prev) / n as f64 <= opts.tol {
            break;
        }
        prev = ll;
        comps = m_step(x, &resp, k, cov_type, opts.reg)?;
    }
    let log_likelihood = *trace.last().expect("at least one E-step");
    Ok(Gmm {
        components: comps,
        cov_type,
        dims: x.n_cols(),
        trace,
        log_likelihood,
        n_train: n,
    })
}

/// Fit a `k`-component mixture by EM, restarting from a fresh seeding when a
/// component collapses.
pub fn fit_gmm(x: Rows<'_>, k: usize, cov_type: CovarianceType, opts: &EmOptions, seed: u64) -> Result<Gmm> {
    if k == 0 {
        return Err(invalid("a mixture needs at least one component"));
    }
    if x.len() < k {
        return Err(invalid(format!("{} samples cannot support {k} components", x.len())));
    }
    if !(opts.reg >= 0.0) {
        return Err(invalid("regularization must be non-negative"));
    }
    let mut last = String::new();
    for attempt in 0..=MAX_RESTARTS {
        let mut rng = seeded(derive_seed(seed, attempt as u64));
        match em_once(x, k, cov_type, opts, &mut rng) {
            Ok(g) => return Ok(g),
            Err(e) => last = e,
        }
    }
    Err(Error::DegenerateMixture(format!(
        "{k} {cov_type:?} components after {} restarts: {last}",
        MAX_RESTARTS
    )))
}

/// Fit mixtures with `1..=max_k` components and keep the lowest AIC.
pub fn fit_gmm_aic(x: Rows<'_>, max_k: usize, cov_type: CovarianceType, opts: &EmOptions, seed: u64) -> Result<Gmm> {
    let mut best: Option<Gmm> = None;
    let mut last_err = None;
    for k in 1..=max_k.min(x.len()) {
        match fit_gmm(x, k, cov_type, opts, derive_seed(seed, k as u64)) {
            Ok(g) => {
                if best.as_ref().is_none_or(|b| g.aic() < b.aic()) {
                    best = Some(g);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| invalid("no component count to try")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmParams {
    /// Largest component count per class; the count is chosen by AIC.
    pub components: usize,
    pub covariance: CovarianceType,
    pub reg: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        GmmParams {
            components: 3,
            covariance: CovarianceType::Full,
            reg: 1e-6,
        }
    }
}

/// Class-conditional mixtures combined with the empirical class prior.
#[derive(Debug, Clone)]
pub struct GmmBayes {
    classes: Vec<Gmm>,
    prior: Vec<f64>,
}

impl GmmBayes {
    pub fn class_models(&self) -> &[Gmm] {
        &self.classes
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// `ln p(x | m) + ln p(m)` for every class.
    pub fn joint_log_density(&self, x: &[f64]) -> Vec<f64> {
        self.classes
            .iter()
            .zip(&self.prior)
            .map(|(g, p)| g.log_pdf(x) + p.ln())
            .collect()
    }

    /// Free parameters of all class mixtures plus the `M - 1` prior weights.
    pub fn n_parameters(&self) -> usize {
        self.classes.iter().map(Gmm::n_parameters).sum::<usize>() + self.prior.len() - 1
    }

    /// Joint log-likelihood `sum_i ln p(x_i, y_i)` of a labelled sample.
    pub fn log_likelihood(&self, data: &Dataset) -> f64 {
        data.rows()
            .iter()
            .zip(data.labels())
            .map(|(x, &y)| self.classes[y].log_pdf(x) + self.prior[y].ln())
            .sum()
    }

    /// AIC of the joint model on `data`.
    pub fn aic(&self, data: &Dataset) -> f64 {
        -2.0 * self.log_likelihood(data) + 2.0 * self.n_parameters() as f64
    }
}

impl ProbClassifier for GmmBayes {
    fn num_classes(&self) -> usize {
        self.prior.len()
    }

    fn predict_proba(&self, x: Rows<'_>) -> ProbMatrix {
        let m = self.prior.len();
        let mut out = Vec::with_capacity(x.len() * m);
        for r in x.iter() {
            let mut row = self.joint_log_density(r);
            softmax_in_place(&mut row);
            out.extend(row);
        }
        ProbMatrix::from_weights(out, m)
    }
}

pub fn fit_gmm_bayes(train: &Dataset, hp: &GmmParams, seed: u64) -> Result<GmmBayes> {
    if !(1..=10).contains(&hp.components) {
        return Err(invalid(format!("components {} not in [1, 10]", hp.components)));
    }
    let prior = class_marginal(train)?;
    let opts = EmOptions {
        reg: hp.reg,
        ..EmOptions::default()
    };
    let mut classes = Vec::with_capacity(train.num_classes());
    for m in 0..train.num_classes() {
        let idx: Vec<usize> = (0..train.len()).filter(|&i| train.labels()[i] == m).collect();
        if idx.is_empty() {
            return Err(invalid(format!("class {m} has no training samples")));
        }
        let sub = train.subset(&idx);
        classes.push(fit_gmm_aic(sub.rows(), hp.components, hp.covariance, &opts, derive_seed(seed, m as u64))?);
    }
    Ok(GmmBayes { classes, prior })
}
