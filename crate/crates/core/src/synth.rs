//! Simulated systems: multivariate-normal classification datasets whose
//! conditional `p(y | x)`, and therefore whose mutual information, is known.
//!
//! Class `m` (0-based) is drawn from `MVN(mu_m, Sigma)` with a shared random
//! covariance and `mu_m = 1.5 (m + 1)` in every coordinate. Two noise knobs
//! take the system from fully leaking (`epsilon = 0`) to independent
//! (`epsilon = 1`):
//!
//! * perturbation resamples each label from the class prior with probability
//!   `epsilon`;
//! * proximity shrinks all means by `1 - epsilon`.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Uniform;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{entropy_unchecked, softmax_in_place, Dataset};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

/// Spacing between consecutive class means, per coordinate.
pub const MEAN_SPACING: f64 = 1.5;

/// Ridge added to the covariance before factorization.
pub const COVARIANCE_RIDGE: f64 = 1e-8;

/// Eigenvalues of the random covariance are redrawn until they reach this.
const MIN_EIGENVALUE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Technique {
    Perturbation,
    Proximity,
}

/// How class sizes are derived from the imbalance ratio `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenMethod {
    Balanced,
    /// One class gets the fraction `r`, the others share the rest.
    Minority,
    /// Every class but the last gets `r`, the last takes the rest.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub technique: Technique,
    pub gen_method: GenMethod,
    pub num_classes: usize,
    pub dims: usize,
    /// Noise level in `[0, 1]`.
    pub epsilon: f64,
    /// Smallest class fraction, in `(0, 1/M]`; must equal `1/M` when balanced.
    pub imbalance: f64,
    #[serde(default = "default_base")]
    pub samples_per_class_base: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_base() -> usize {
    1000
}

impl SynthConfig {
    pub fn balanced(technique: Technique, num_classes: usize, dims: usize, epsilon: f64, seed: u64) -> Self {
        SynthConfig {
            technique,
            gen_method: GenMethod::Balanced,
            num_classes,
            dims,
            epsilon,
            imbalance: 1.0 / num_classes as f64,
            samples_per_class_base: default_base(),
            seed,
        }
    }

    /// Balanced when `r = 1/M`, otherwise the minority method.
    pub fn with_imbalance(mut self, r: f64) -> Self {
        let m = self.num_classes as f64;
        if (r - 1.0 / m).abs() < 1e-12 {
            self.gen_method = GenMethod::Balanced;
            self.imbalance = 1.0 / m;
        } else {
            self.gen_method = GenMethod::Minority;
            self.imbalance = r;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_classes;
        if m < 2 {
            return Err(invalid(format!("need at least 2 classes, got {m}")));
        }
        if self.dims == 0 {
            return Err(invalid("dims must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid(format!("epsilon {} not in [0, 1]", self.epsilon)));
        }
        let r_max = 1.0 / m as f64;
        if !(self.imbalance > 0.0 && self.imbalance <= r_max + 1e-12) {
            return Err(invalid(format!("imbalance {} not in (0, 1/{m}]", self.imbalance)));
        }
        if self.gen_method == GenMethod::Balanced && (self.imbalance - r_max).abs() > 1e-9 {
            return Err(invalid(format!("balanced generation requires imbalance = 1/{m}")));
        }
        if self.samples_per_class_base == 0 {
            return Err(invalid("samples_per_class_base must be positive"));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.samples_per_class_base * self.num_classes
    }
}

/// `ceil(n * r)` with a guard against `0.1 * 2000 = 200.00000000000003`.
fn ceil_frac(n: usize, r: f64) -> usize {
    (n as f64 * r - 1e-9).ceil().max(0.0) as usize
}

/// Per-class sample counts for `n` instances.
pub fn class_counts(num_classes: usize, n: usize, r: f64, method: GenMethod) -> Result<Vec<usize>> {
    let m = num_classes;
    if m < 2 {
        return Err(invalid(format!("need at least 2 classes, got {m}")));
    }
    if !(r > 0.0 && r <= 1.0 / m as f64 + 1e-12) {
        return Err(invalid(format!("imbalance {r} not in (0, 1/{m}]")));
    }
    let counts = match method {
        GenMethod::Balanced => (0..m).map(|c| n / m + usize::from(c < n % m)).collect(),
        GenMethod::Majority => {
            let small = ceil_frac(n, r);
            let rest = n as i64 - ((m - 1) * small) as i64;
            if rest <= 0 {
                return Err(invalid(format!("majority class would have {rest} samples")));
            }
            let mut v = vec![small; m - 1];
            v.push(rest as usize);
            v
        }
        GenMethod::Minority => {
            let small = ceil_frac(n, r);
            let other = (n.saturating_sub(small)).div_ceil(m - 1);
            let mut v = vec![other; m - 1];
            v.push(small);
            v
        }
    };
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(invalid(format!("class {c} would be empty")));
    }
    Ok(counts)
}

/// The label marginal `p_Y` implied by the generation method.
pub fn class_prior(num_classes: usize, r: f64, method: GenMethod) -> Vec<f64> {
    let m = num_classes;
    match method {
        GenMethod::Balanced => vec![1.0 / m as f64; m],
        GenMethod::Majority => {
            let mut p = vec![r; m - 1];
            p.push(1.0 - r * (m - 1) as f64);
            p
        }
        GenMethod::Minority => {
            let mut p = vec![(1.0 - r) / (m - 1) as f64; m - 1];
            p.push(r);
            p
        }
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
fn random_orthogonal(d: usize, rng: &mut Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Q S Q^T` with `Q` random orthogonal and `S` diagonal with entries in
/// `[1e-6, 1)`. Returned row-major, exactly symmetric.
pub fn random_covariance(d: usize, seed: u64) -> Result<Vec<f64>> {
    let (cov, _) = random_covariance_with_spectrum(d, seed)?;
    Ok(cov)
}

/// Like [`random_covariance`], also returning the diagonal of `S`.
pub fn random_covariance_with_spectrum(d: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if d == 0 {
        return Err(invalid("covariance dimension must be at least 1"));
    }
    let mut rng = seeded(seed);
    let q = random_orthogonal(d, &mut rng);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let s: Vec<f64> = (0..d)
        .map(|_| loop {
            let v: f64 = unit.sample(&mut rng);
            if v >= MIN_EIGENVALUE {
                break v;
            }
        })
        .collect();
    let qs = &q * DMatrix::from_diagonal(&DVector::from_vec(s.clone()));
    let sigma = qs * q.transpose();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
        }
    }
    Ok((out, s))
}

#[derive(Debug, Clone)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
}

/// The exact generating distribution of a simulated system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub technique: Technique,
    pub epsilon: f64,
    /// Class means actually used for sampling (already shrunk for proximity).
    pub means: Vec<Vec<f64>>,
    /// Shared covariance, row-major `d x d`.
    pub covariance: Vec<f64>,
    pub prior: Vec<f64>,
    #[serde(skip)]
    factor: OnceLock<std::result::Result<Factor, String>>,
}

impl PartialEq for GroundTruthModel {
    fn eq(&self, other: &Self) -> bool {
        self.technique == other.technique
            && self.epsilon == other.epsilon
            && self.means == other.means
            && self.covariance == other.covariance
            && self.prior == other.prior
    }
}

impl GroundTruthModel {
    pub fn new(technique: Technique, epsilon: f64, means: Vec<Vec<f64>>, covariance: Vec<f64>, prior: Vec<f64>) -> Result<Self> {
        let m = prior.len();
        let d = means.first().map(Vec::len).unwrap_or(0);
        if m < 2 || means.len() != m || means.iter().any(|mu| mu.len() != d) || d == 0 {
            return Err(invalid("means and prior disagree on class count or dimension"));
        }
        if covariance.len() != d * d {
            return Err(Error::LengthMismatch {
                left: covariance.len(),
                right: d * d,
            });
        }
        let s: f64 = prior.iter().sum();
        if prior.iter().any(|p| *p < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(invalid("prior is not a probability vector"));
        }
        Ok(GroundTruthModel {
            technique,
            epsilon,
            means,
            covariance,
            prior,
            factor: OnceLock::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.prior.len()
    }

    pub fn dims(&self) -> usize {
        self.means[0].len()
    }

    fn factor(&self) -> Result<&Factor> {
        let d = self.dims();
        self.factor
            .get_or_init(|| {
                let mut sigma = DMatrix::from_row_slice(d, d, &self.covariance);
                for i in 0..d {
                    sigma[(i, i)] += COVARIANCE_RIDGE;
                }
                Cholesky::new(sigma)
                    .map(|chol| Factor { chol })
                    .ok_or_else(|| "covariance is not positive definite after regularization".to_string())
            })
            .as_ref()
            .map_err(|e| Error::Numerical(e.clone()))
    }

    /// `p(y | x)` of the system, including the label-resampling mixture for
    /// perturbation.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims();
        if x.len() != d {
            return Err(Error::LengthMismatch { left: x.len(), right: d });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite feature vector"));
        }
        let factor = self.factor()?;
        let mut logits: Vec<f64> = self
            .means
            .iter()
            .zip(&self.prior)
            .map(|(mu, &p)| {
                let diff = DVector::from_iterator(d, x.iter().zip(mu).map(|(a, b)| a - b));
                let z = factor
                    .chol
                    .l_dirty()
                    .solve_lower_triangular(&diff)
                    .expect("Cholesky factor has a non-zero diagonal");
                if p > 0.0 {
                    p.ln() - 0.5 * z.norm_squared()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        softmax_in_place(&mut logits);
        if self.technique == Technique::Perturbation && self.epsilon > 0.0 {
            for (q, p) in logits.iter_mut().zip(&self.prior) {
                *q = (1.0 - self.epsilon) * *q + self.epsilon * p;
            }
        }
        Ok(logits)
    }

    /// Draw one feature vector from class `class`.
    fn sample_x(&self, class: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        let d = self.dims();
        let factor = self.factor()?;
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let x = factor.chol.l() * z;
        Ok(self.means[class].iter().zip(x.iter()).map(|(m, v)| m + v).collect())
    }
}

/// Class means before noise: `1.5 (m + 1)` in every coordinate.
pub fn class_means(num_classes: usize, dims: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|m| vec![MEAN_SPACING * (m + 1) as f64 * scale; dims])
        .collect()
}

/// Generate a simulated system and the model that produced it.
pub fn generate_system(cfg: &SynthConfig) -> Result<(Dataset, GroundTruthModel)> {
    cfg.validate()?;
    let m = cfg.num_classes;
    let counts = class_counts(m, cfg.total_samples(), cfg.imbalance, cfg.gen_method)?;
    let prior = class_prior(m, cfg.imbalance, cfg.gen_method);
    let covariance = random_covariance(cfg.dims, derive_seed(cfg.seed, 0))?;
    let scale = match cfg.technique {
        Technique::Perturbation => 1.0,
        Technique::Proximity => 1.0 - cfg.epsilon,
    };
    let gt = GroundTruthModel::new(cfg.technique, cfg.epsilon, class_means(m, cfg.dims, scale), covariance, prior)?;

    let mut rng = seeded(derive_seed(cfg.seed, 1));
    let resample = WeightedIndex::new(&gt.prior).map_err(|e| invalid(format!("bad prior: {e}")))?;
    let n: usize = counts.iter().sum();
    let mut features = Vec::with_capacity(n * cfg.dims);
    let mut labels = Vec::with_capacity(n);
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            features.extend(gt.sample_x(class, &mut rng)?);
            let flip = cfg.technique == Technique::Perturbation && rng.random::<f64>() < cfg.epsilon;
            labels.push(if flip { resample.sample(&mut rng) } else { class });
        }
    }
    let dataset = Dataset::new(features, cfg.dims, labels, m)?;
    Ok((dataset, gt))
}

/// Plug-in ground-truth MI in bits: `H(Y) - mean_i H(Y | x_i)` with the
/// model's exact conditionals, averaged over the dataset's feature vectors.
pub fn ground_truth_mi(dataset: &Dataset, gt: &GroundTruthModel) -> Result<f64> {
    if dataset.n_features() != gt.dims() || dataset.num_classes() != gt.num_classes() {
        return Err(invalid("dataset shape does not match the model"));
    }
    let mut cond = 0.0;
    for x in dataset.rows().iter() {
        cond += entropy_unchecked(&gt.posterior(x)?);
    }
    Ok(entropy_unchecked(&gt.prior) - cond / dataset.len() as f64)
}

/// Monte-Carlo estimate of the Bayes error: mean of `1 - max_m p(m | x_i)`.
pub fn bayes_error(dataset: &Dataset, gt: &GroundTruthModel) -> Result<f64> {
    let mut err = 0.0;
    for x in dataset.rows().iter() {
        let p = gt.posterior(x)?;
        err += 1.0 - p.iter().cloned().fold(0.0, f64::max);
    }
    Ok(err / dataset.len() as f64)
}

/// A discrete two-point system with one binary feature: `x = 0` (probability
/// 0.5) always has label 0; `x = 1` has label 1 with probability 0.1. Its
/// mutual information is about 0.0519 bits and its Bayes predictor never
/// predicts class 1.
pub fn two_point_system(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeded(seed);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = usize::from(rng.random::<f64>() >= 0.5);
        let y = usize::from(x == 1 && rng.random::<f64>() < 0.1);
        features.push(x as f64);
        labels.push(y);
    }
    Dataset::new(features, 1, labels, 2)
}

/// Exact conditionals of [`two_point_system`].
pub fn two_point_posterior(x: f64) -> [f64; 2] {
    if x < 0.5 {
        [1.0, 0.0]
    } else {
        [0.9, 0.1]
    }
}
