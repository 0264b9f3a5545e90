//! Mutual-information estimators for classification data. All values are in
//! bits and are kept unclamped; negative estimates are legitimate sampling
//! outcomes.

pub mod bounds;
pub mod mine;

use serde::{Deserialize, Serialize};

use crate::calibrate::{apply_calibrator, fit_calibrator, CalibrationMethod, CalibrationOptions};
use crate::data::{class_marginal, entropy_bits, log_sum_exp, Dataset, ProbMatrix, SplitPlan, PROB_CLIP};
use crate::error::{invalid, Error, Result};
use crate::models::mlp::log_prior;
use crate::models::{
    fit_gmm_bayes, fit_model, fit_softmax_net, portfolio_search, random_search, rank_configs, Family, GmmBayes, GmmParams, Head,
    Hyperparameters, NetParams, Objective, ProbClassifier, Ranked, SearchSpace,
};
use crate::rng::{derive_seed, seeded};

pub use bounds::{binary_entropy, cond_entropy_bounds, mi_bounds, midpoint_value, EntropyBounds};
pub use mine::{batch_count, mine_bits, mine_split_scores, train_stat_net, MineParams, StatNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiMethod {
    MidPoint,
    LogLoss,
    CalLogLoss,
    Gmm,
    Mine,
    PcSoftmax,
}

impl MiMethod {
    pub const ALL: [MiMethod; 6] = [
        MiMethod::MidPoint,
        MiMethod::LogLoss,
        MiMethod::CalLogLoss,
        MiMethod::Gmm,
        MiMethod::Mine,
        MiMethod::PcSoftmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MiMethod::MidPoint => "mid-point",
            MiMethod::LogLoss => "log-loss",
            MiMethod::CalLogLoss => "cal-log-loss",
            MiMethod::Gmm => "gmm",
            MiMethod::Mine => "mine",
            MiMethod::PcSoftmax => "pc-softmax",
        }
    }
}

impl std::fmt::Display for MiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MiMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown MI method '{s}'")))
    }
}

/// How the log-loss estimator scores a probability row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogLossForm {
    /// `H(p_marginal) - mean_i H(p_i)`; ignores the labels.
    #[default]
    PredictiveEntropy,
    /// `mean_i[-lg p_marginal[y_i]] - mean_i[-lg p_i[y_i]]`.
    CrossEntropy,
}

/// Which prior-corrected softmax the PC-softmax estimator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PcForm {
    /// `mean lg(exp s_y / sum_m p_m exp s_m)`
    #[default]
    PriorWeighted,
    /// `-mean lg(exp s_y / sum_m exp(p_m s_m))`
    Printed,
}

impl PcForm {
    pub fn head(self) -> Head {
        match self {
            PcForm::PriorWeighted => Head::PcSoftmax,
            PcForm::Printed => Head::PcSoftmaxPrinted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub value: f64,
    pub method: MiMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationMethod>,
    /// Description of the model behind the estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    /// Set when the value falls outside `[0, lg M]`.
    pub out_of_range: bool,
}

impl MiEstimate {
    pub fn new(value: f64, method: MiMethod, num_classes: usize) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!("{method} estimate is {value}")));
        }
        let cap = (num_classes as f64).log2();
        Ok(MiEstimate {
            value,
            method,
            calibration: None,
            candidate: None,
            fold: None,
            out_of_range: !(0.0..=cap + 1e-9).contains(&value),
        })
    }

    /// The value clamped to `[0, lg M]` for display.
    pub fn clamped(&self, num_classes: usize) -> f64 {
        self.value.clamp(0.0, (num_classes as f64).log2())
    }
}

/// Mid-point estimate from a classifier's error rate on held-out data.
pub fn mi_midpoint(err: f64, marginal: &[f64]) -> Result<MiEstimate> {
    MiEstimate::new(midpoint_value(err, marginal)?, MiMethod::MidPoint, marginal.len())
}

/// Log-loss estimate from predicted rows, the true labels of those rows and
/// the marginal predictor's probabilities.
pub fn mi_logloss(probs: &ProbMatrix, labels: &[usize], marginal: &[f64], form: LogLossForm) -> Result<MiEstimate> {
    let m = probs.n_classes();
    if marginal.len() != m {
        return Err(Error::LengthMismatch {
            left: marginal.len(),
            right: m,
        });
    }
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("evaluation rows"));
    }
    let p = probs.clipped(PROB_CLIP);
    let mc = ProbMatrix::new(marginal.to_vec(), m)?.clipped(PROB_CLIP);
    let mc = mc.row(0);
    let n = labels.len() as f64;
    let value = match form {
        LogLossForm::PredictiveEntropy => {
            let h_rows: f64 = p.rows().map(|r| -r.iter().map(|v| v * v.log2()).sum::<f64>()).sum::<f64>() / n;
            let h_mc = -mc.iter().map(|v| v * v.log2()).sum::<f64>();
            h_mc - h_rows
        }
        LogLossForm::CrossEntropy => {
            let mut gap = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                if y >= m {
                    return Err(invalid(format!("label {y} out of range for {m} classes")));
                }
                gap += p.row(i)[y].log2() - mc[y].log2();
            }
            gap / n
        }
    };
    MiEstimate::new(value, MiMethod::LogLoss, m)
}

/// `mean_i lg p(y_i | x_i) - lg p(y_i)` under a class-conditional mixture
/// model, i.e. the mean of `lg p(x,y) - lg p(x) - lg p(y)`.
pub fn gmm_mi_bits(model: &GmmBayes, data: &Dataset) -> f64 {
    let prior = model.prior();
    let mut total = 0.0;
    for (x, &y) in data.rows().iter().zip(data.labels()) {
        let joint = model.joint_log_density(x);
        total += joint[y] - log_sum_exp(&joint) - prior[y].ln();
    }
    total / data.len() as f64 * std::f64::consts::LOG2_E
}

/// Fit class-conditional mixtures on `data` and evaluate on the same rows.
pub fn mi_gmm(data: &Dataset, hp: &GmmParams, seed: u64) -> Result<MiEstimate> {
    let model = fit_gmm_bayes(data, hp, seed)?;
    MiEstimate::new(gmm_mi_bits(&model, data), MiMethod::Gmm, data.num_classes())
}

/// MINE ensemble trained and evaluated on `data`.
pub fn mi_mine(data: &Dataset, hp: &MineParams, seed: u64) -> Result<MiEstimate> {
    let (v, _) = mine_bits(data, data, hp, seed)?;
    MiEstimate::new(v, MiMethod::Mine, data.num_classes())
}

/// PC-softmax estimate from raw class scores (`n x M`, row-major).
pub fn pc_softmax_estimate(scores: &[f64], labels: &[usize], prior: &[f64], form: PcForm) -> Result<f64> {
    let m = prior.len();
    if scores.len() != labels.len() * m {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len() * m,
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("evaluation rows"));
    }
    let lp = log_prior(prior);
    let mut buf = vec![0.0; m];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let s = &scores[i * m..(i + 1) * m];
        match form {
            PcForm::PriorWeighted => {
                for k in 0..m {
                    buf[k] = lp[k] + s[k];
                }
                total += s[y] - log_sum_exp(&buf);
            }
            PcForm::Printed => {
                for k in 0..m {
                    buf[k] = prior[k] * s[k];
                }
                total -= s[y] - log_sum_exp(&buf);
            }
        }
    }
    Ok(total / labels.len() as f64 * std::f64::consts::LOG2_E)
}

/// Train a PC-softmax network on `train` and evaluate on `test`.
pub fn mi_pcsoftmax(train: &Dataset, test: &Dataset, hp: &NetParams, form: PcForm, seed: u64) -> Result<MiEstimate> {
    let net = fit_softmax_net(train, hp, form.head(), seed)?;
    let v = pc_softmax_estimate(&net.scores(test.rows()), test.labels(), &net.prior(), form)?;
    MiEstimate::new(v, MiMethod::PcSoftmax, test.num_classes())
}

/// Settings shared by the estimation pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub space: SearchSpace,
    /// Configurations sampled by the hyperparameter search.
    pub budget: usize,
    pub inner_repeats: usize,
    pub inner_fraction: f64,
    pub calibration: CalibrationMethod,
    pub calibration_options: CalibrationOptions,
    /// Share of the training rows held back to fit the calibrator.
    pub calibration_fraction: f64,
    pub log_loss_form: LogLossForm,
    pub pc_form: PcForm,
    pub mine: MineParams,
    /// Shuffles per split when scoring MINE settings.
    pub mine_repeats: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            space: SearchSpace::desk(),
            budget: 8,
            inner_repeats: 3,
            inner_fraction: 0.3,
            calibration: CalibrationMethod::Isotonic,
            calibration_options: CalibrationOptions {
                pseudo_count: 1.0,
                ..CalibrationOptions::default()
            },
            calibration_fraction: 0.3,
            log_loss_form: LogLossForm::CrossEntropy,
            pc_form: PcForm::PriorWeighted,
            mine: MineParams::default(),
            mine_repeats: 10,
        }
    }
}

/// A selected configuration for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setup {
    Model(Hyperparameters),
    Mine(MineParams),
}

impl Setup {
    pub fn describe(&self) -> String {
        match self {
            Setup::Model(hp) => serde_json::to_string(hp).unwrap_or_else(|_| hp.family().to_string()),
            Setup::Mine(p) => serde_json::to_string(p).unwrap_or_else(|_| "mine".into()),
        }
    }
}

fn inner_plan(cfg: &EstimatorConfig, seed: u64) -> SplitPlan {
    SplitPlan::mccv(cfg.inner_repeats, cfg.inner_fraction, derive_seed(seed, 0))
}

/// Search configurations suited to `method` on `train`, best first.
pub fn select_setups(method: MiMethod, train: &Dataset, cfg: &EstimatorConfig, seed: u64) -> Result<Vec<Ranked<Setup>>> {
    let plan = inner_plan(cfg, seed);
    let search_seed = derive_seed(seed, 1);
    let wrap = |cands: Vec<crate::models::ModelCandidate>| {
        cands
            .into_iter()
            .map(|c| Ranked {
                config: Setup::Model(c.hyperparameters),
                score: c.score,
                rank: c.rank,
                seed: c.seed,
                fold_scores: c.fold_scores,
            })
            .collect()
    };
    Ok(match method {
        MiMethod::MidPoint | MiMethod::LogLoss | MiMethod::CalLogLoss => {
            wrap(portfolio_search(&cfg.space, cfg.budget, &plan, train, search_seed)?)
        }
        MiMethod::Gmm => wrap(random_search(Family::GmmBayes, &cfg.space, cfg.budget, Objective::Aic, &plan, train, search_seed)?),
        MiMethod::PcSoftmax => wrap(random_search(
            Family::PcSoftmaxNet,
            &cfg.space,
            cfg.budget,
            Objective::Ber,
            &plan,
            train,
            search_seed,
        )?),
        MiMethod::Mine => {
            cfg.space.validate()?;
            let mut rng = seeded(search_seed);
            let configs: Vec<Setup> = (0..cfg.budget).map(|_| Setup::Mine(cfg.mine.sample(&cfg.space.pc_net, &mut rng))).collect();
            let splits = plan.splits(train)?;
            rank_configs(configs, search_seed, |s, sd| match s {
                Setup::Mine(p) => mine_split_scores(p, train, &splits, cfg.mine_repeats, sd),
                Setup::Model(_) => unreachable!(),
            })?
        }
    })
}

/// Error rate of `model` on `test`, limited to the range the bounds accept.
fn error_rate(model: &dyn ProbClassifier, test: &Dataset) -> f64 {
    let pred = model.predict(test.rows());
    let wrong = pred.iter().zip(test.labels()).filter(|(a, b)| a != b).count();
    let m = test.num_classes() as f64;
    (wrong as f64 / test.len() as f64).min((m - 1.0) / m)
}

/// Probabilities on `test` from a model fitted on part of `train` and
/// calibrated on the rest.
pub fn calibrated_proba(hp: &Hyperparameters, train: &Dataset, test: &Dataset, cfg: &EstimatorConfig, seed: u64) -> Result<ProbMatrix> {
    let split = SplitPlan::mccv(1, cfg.calibration_fraction, derive_seed(seed, 2)).splits(train)?.remove(0);
    let fit_part = train.subset(&split.train);
    let cal_part = train.subset(&split.test);
    let model = fit_model(hp, &fit_part, seed)?;
    let cal = fit_calibrator(
        cfg.calibration,
        &model.predict_proba(cal_part.rows()),
        cal_part.labels(),
        &cfg.calibration_options,
    )?;
    apply_calibrator(&cal, &model.predict_proba(test.rows()))
}

/// Estimate on `test` with a given configuration fitted on `train`.
pub fn estimate_with(method: MiMethod, setup: &Setup, train: &Dataset, test: &Dataset, cfg: &EstimatorConfig, seed: u64) -> Result<MiEstimate> {
    let m = train.num_classes();
    let mismatch = || invalid(format!("configuration does not fit the {method} estimator"));
    let mut est = match (method, setup) {
        (MiMethod::MidPoint, Setup::Model(hp)) => {
            let model = fit_model(hp, train, seed)?;
            mi_midpoint(error_rate(model.as_ref(), test), &class_marginal(train)?)?
        }
        (MiMethod::LogLoss, Setup::Model(hp)) => {
            let model = fit_model(hp, train, seed)?;
            mi_logloss(&model.predict_proba(test.rows()), test.labels(), &class_marginal(train)?, cfg.log_loss_form)?
        }
        (MiMethod::CalLogLoss, Setup::Model(hp)) => {
            let p = calibrated_proba(hp, train, test, cfg, seed)?;
            let mut e = mi_logloss(&p, test.labels(), &class_marginal(train)?, cfg.log_loss_form)?;
            e.method = MiMethod::CalLogLoss;
            e.calibration = Some(cfg.calibration);
            e
        }
        (MiMethod::Gmm, Setup::Model(Hyperparameters::GmmBayes(p))) => {
            let model = fit_gmm_bayes(train, p, seed)?;
            MiEstimate::new(gmm_mi_bits(&model, test), MiMethod::Gmm, m)?
        }
        (MiMethod::PcSoftmax, Setup::Model(Hyperparameters::PcSoftmaxNet(p))) => mi_pcsoftmax(train, test, p, cfg.pc_form, seed)?,
        (MiMethod::Mine, Setup::Mine(p)) => MiEstimate::new(mine_bits(train, test, p, seed)?.0, MiMethod::Mine, m)?,
        _ => return Err(mismatch()),
    };
    est.candidate = Some(setup.describe());
    Ok(est)
}

/// Search on `train`, refit the best configuration on all of `train` and
/// estimate on `test`.
pub fn estimate(method: MiMethod, train: &Dataset, test: &Dataset, cfg: &EstimatorConfig, seed: u64) -> Result<MiEstimate> {
    let best = select_setups(method, train, cfg, seed)?.remove(0);
    estimate_with(method, &best.config, train, test, cfg, best.seed)
}

/// Label entropy of a dataset in bits.
pub fn label_entropy(data: &Dataset) -> Result<f64> {
    entropy_bits(&class_marginal(data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_system, ground_truth_mi, two_point_posterior, two_point_system, SynthConfig, Technique};

    fn population_two_point() -> (ProbMatrix, Vec<usize>) {
        // 100 rows in exact population proportions
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..100 {
            let x = if i < 50 { 0.0 } else { 1.0 };
            let y = usize::from(i >= 95);
            rows.extend(two_point_posterior(x));
            labels.push(y);
        }
        (ProbMatrix::new(rows, 2).unwrap(), labels)
    }

    #[test]
    fn logloss_examples() {
        let marginal = [0.95, 0.05];
        let (p, y) = population_two_point();
        for form in [LogLossForm::PredictiveEntropy, LogLossForm::CrossEntropy] {
            let e = mi_logloss(&p, &y, &marginal, form).unwrap();
            assert!((e.value - 0.0519).abs() < 1e-3, "{form:?}: {}", e.value);
            let rep = ProbMatrix::repeat(&marginal, 100);
            assert!(mi_logloss(&rep, &y, &marginal, form).unwrap().value.abs() < 1e-12);
        }
        let one_hot = ProbMatrix::new(vec![1.0, 0.0, 0.0, 1.0], 2).unwrap();
        let e = mi_logloss(&one_hot, &[0, 1], &[0.5, 0.5], LogLossForm::default()).unwrap();
        assert!((e.value - 1.0).abs() < 1e-6);
        assert!(!e.out_of_range);
    }

    #[test]
    fn midpoint_overestimates_the_worked_example() {
        let e = mi_midpoint(0.05, &[0.95, 0.05]).unwrap();
        assert!((e.value - 0.0932).abs() < 1e-3);
        let (p, y) = population_two_point();
        let ll = mi_logloss(&p, &y, &[0.95, 0.05], LogLossForm::default()).unwrap();
        assert!(ll.value < e.value);
    }

    #[test]
    fn isotonic_calibration_recovers_the_worked_example() {
        // population proportions: 500 (0,0), 450 (1,0), 50 (1,1)
        let x: Vec<f64> = (0..1000).map(|i| if i < 500 { 0.0 } else { 1.0 }).collect();
        let y: Vec<usize> = (0..1000).map(|i| usize::from(i >= 950)).collect();
        let d = Dataset::new(x, 1, y, 2).unwrap();
        assert_eq!(two_point_system(10, 1).unwrap().n_features(), 1);
        // a flat model that ignores x, calibrated on the data itself
        let flat = ProbMatrix::repeat(&[0.6, 0.4], d.len());
        let skew: Vec<f64> = d.rows().iter().flat_map(|r| if r[0] > 0.5 { [0.7, 0.3] } else { [0.8, 0.2] }).collect();
        let skew = ProbMatrix::new(skew, 2).unwrap();
        let cal = fit_calibrator(CalibrationMethod::Isotonic, &skew, d.labels(), &CalibrationOptions::default()).unwrap();
        let p = apply_calibrator(&cal, &skew).unwrap();
        let marginal = class_marginal(&d).unwrap();
        let e = mi_logloss(&p, d.labels(), &marginal, LogLossForm::default()).unwrap();
        assert!((e.value - 0.052).abs() < 0.002, "{}", e.value);
        let cal = fit_calibrator(CalibrationMethod::Isotonic, &flat, d.labels(), &CalibrationOptions::default()).unwrap();
        let p = apply_calibrator(&cal, &flat).unwrap();
        assert!(mi_logloss(&p, d.labels(), &marginal, LogLossForm::default()).unwrap().value.abs() < 1e-9);
    }

    #[test]
    fn printed_pc_softmax_on_constant_scores() {
        for m in [2usize, 3, 5] {
            let c = 1.7;
            let n = 7;
            let scores = vec![c; n * m];
            let labels: Vec<usize> = (0..n).map(|i| i % m).collect();
            let prior = vec![1.0 / m as f64; m];
            let v = pc_softmax_estimate(&scores, &labels, &prior, PcForm::Printed).unwrap();
            let want = (m as f64).log2() - c * (1.0 - 1.0 / m as f64) * std::f64::consts::LOG2_E;
            assert!((v - want).abs() < 1e-12);
            // the prior-weighted form gives zero for any constant network
            let v = pc_softmax_estimate(&scores, &labels, &prior, PcForm::PriorWeighted).unwrap();
            assert!(v.abs() < 1e-12);
        }
    }

    fn synth(eps: f64, seed: u64) -> (Dataset, crate::synth::GroundTruthModel) {
        let cfg = SynthConfig {
            samples_per_class_base: 500,
            ..SynthConfig::balanced(Technique::Perturbation, 2, 2, eps, seed)
        };
        generate_system(&cfg).unwrap()
    }

    #[test]
    fn gmm_on_independent_labels_is_near_zero() {
        for seed in 0..10 {
            let (d, _) = synth(1.0, seed);
            let e = mi_gmm(&d, &GmmParams::default(), seed).unwrap();
            assert!(e.value.abs() <= 0.05, "seed {seed}: {}", e.value);
        }
    }

    #[test]
    fn gmm_tracks_ground_truth_without_noise() {
        let (d, gt) = synth(0.0, 3);
        let truth = ground_truth_mi(&d, &gt).unwrap();
        let e = mi_gmm(&d, &GmmParams::default(), 1).unwrap();
        let hy = label_entropy(&d).unwrap();
        assert!((e.value - truth).abs() <= 0.05 * hy, "{} vs {truth}", e.value);
    }

    #[test]
    fn pc_softmax_on_independent_and_clean_data() {
        let hp = NetParams {
            epochs: 30,
            ..NetParams::default()
        };
        for seed in 0..3 {
            let (tr, _) = synth(1.0, seed);
            let (te, _) = synth(1.0, seed + 100);
            let e = mi_pcsoftmax(&tr, &te, &hp, PcForm::PriorWeighted, seed).unwrap();
            assert!(e.value <= 0.1, "{}", e.value);
        }
        let (tr, gt) = synth(0.0, 7);
        let (te, _) = synth(0.0, 7);
        let truth = ground_truth_mi(&te, &gt).unwrap();
        let e = mi_pcsoftmax(&tr, &te, &hp, PcForm::PriorWeighted, 1).unwrap();
        assert!(e.value <= truth + 0.05, "{} vs {truth}", e.value);
        assert!(e.value > 0.5 * truth);
    }

    #[test]
    fn pipeline_estimates_are_sensible() {
        let (d, gt) = synth(0.0, 11);
        let split = SplitPlan::mccv(1, 0.3, 1).splits(&d).unwrap().remove(0);
        let (tr, te) = (d.subset(&split.train), d.subset(&split.test));
        let truth = ground_truth_mi(&te, &gt).unwrap();
        let cfg = EstimatorConfig {
            budget: 4,
            ..EstimatorConfig::default()
        };
        for method in [MiMethod::MidPoint, MiMethod::LogLoss, MiMethod::CalLogLoss, MiMethod::Gmm, MiMethod::PcSoftmax] {
            let e = estimate(method, &tr, &te, &cfg, 2).unwrap();
            assert_eq!(e.method, method);
            assert!((e.value - truth).abs() < 0.1, "{method}: {} vs {truth}", e.value);
            assert!(e.candidate.is_some());
        }
        let bad = estimate_with(MiMethod::Mine, &Setup::Model(Hyperparameters::Marginal), &tr, &te, &cfg, 0);
        assert!(bad.is_err());
    }

    #[test]
    fn mine_search_ranks_settings() {
        let (d, _) = synth(0.5, 2);
        let cfg = EstimatorConfig {
            budget: 2,
            mine: MineParams {
                epochs: 5,
                patience: 5,
                ensemble: 2,
                ..MineParams::default()
            },
            mine_repeats: 3,
            ..EstimatorConfig::default()
        };
        let r = select_setups(MiMethod::Mine, &d, &cfg, 1).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r[0].score <= r[1].score);
        assert!(matches!(r[0].config, Setup::Mine(_)));
    }

    #[test]
    fn estimates_serialize_with_method_names() {
        let e = mi_midpoint(0.05, &[0.95, 0.05]).unwrap();
        let json = serde_json::to_string(&e).unwrap();
        assert!(json.contains("\"mid-point\""));
        let back: MiEstimate = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
        assert_eq!("cal-log-loss".parse::<MiMethod>().unwrap(), MiMethod::CalLogLoss);
    }
}
