//! Leak / no-leak decisions from repeated cross-validated tests, detection
//! quality over labelled collections of systems, and NMAE.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{classification_metrics, confusion_matrix, Dataset, SplitPlan};
use crate::error::{invalid, Error, Result};
use crate::miest::{estimate_with, select_setups, EstimatorConfig, MiMethod, Setup};
use crate::models::{fit_marginal_predictor, fit_model, ProbClassifier};
use crate::rng::derive_seed;
use crate::stats::{aggregate_pvalues, corrected_paired_ttest, fisher_exact, holm_bonferroni, ott_pvalue, Aggregation, TestResult};

/// How per-candidate evidence is turned into a p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    MidPoint,
    LogLoss,
    CalLogLoss,
    Gmm,
    Mine,
    PcSoftmax,
    PttMajority,
    FetMean,
    FetMedian,
}

impl Approach {
    pub const ALL: [Approach; 9] = [
        Approach::MidPoint,
        Approach::LogLoss,
        Approach::CalLogLoss,
        Approach::Gmm,
        Approach::Mine,
        Approach::PcSoftmax,
        Approach::PttMajority,
        Approach::FetMean,
        Approach::FetMedian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::MidPoint => "mid-point",
            Approach::LogLoss => "log-loss",
            Approach::CalLogLoss => "cal-log-loss",
            Approach::Gmm => "gmm",
            Approach::Mine => "mine",
            Approach::PcSoftmax => "pc-softmax",
            Approach::PttMajority => "ptt-majority",
            Approach::FetMean => "fet-mean",
            Approach::FetMedian => "fet-median",
        }
    }

    /// The MI estimator behind an OTT approach.
    pub fn mi_method(self) -> Option<MiMethod> {
        match self {
            Approach::MidPoint => Some(MiMethod::MidPoint),
            Approach::LogLoss => Some(MiMethod::LogLoss),
            Approach::CalLogLoss => Some(MiMethod::CalLogLoss),
            Approach::Gmm => Some(MiMethod::Gmm),
            Approach::Mine => Some(MiMethod::Mine),
            Approach::PcSoftmax => Some(MiMethod::PcSoftmax),
            Approach::PttMajority | Approach::FetMean | Approach::FetMedian => None,
        }
    }
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| invalid(format!("unknown approach '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IldConfig {
    pub approach: Approach,
    pub alpha: f64,
    /// Number of top candidates tested.
    pub top_j: usize,
    /// Minimum Holm rejections for a leak decision.
    pub threshold: usize,
    pub outer_folds: usize,
    /// Search, calibration and estimator settings.
    pub estimator: EstimatorConfig,
}

impl Default for IldConfig {
    fn default() -> Self {
        IldConfig {
            approach: Approach::CalLogLoss,
            alpha: 0.01,
            top_j: 10,
            threshold: 5,
            outer_folds: 10,
            estimator: EstimatorConfig {
                budget: 12,
                ..EstimatorConfig::default()
            },
        }
    }
}

impl IldConfig {
    pub fn new(approach: Approach) -> Self {
        IldConfig {
            approach,
            ..IldConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if self.top_j == 0 {
            return Err(invalid("top_j must be at least 1"));
        }
        if self.threshold == 0 || self.threshold > self.top_j {
            return Err(invalid(format!("threshold {} not in [1, {}]", self.threshold, self.top_j)));
        }
        if self.outer_folds < 2 {
            return Err(invalid("outer_folds must be at least 2"));
        }
        if self.estimator.budget < self.top_j {
            return Err(invalid(format!(
                "search budget {} is smaller than top_j {}",
                self.estimator.budget, self.top_j
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Leak,
    NoLeak,
}

impl Decision {
    pub fn is_leak(self) -> bool {
        self == Decision::Leak
    }
}

/// Evidence and p-value for one tested candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub setup: Setup,
    pub search_score: f64,
    pub seed: u64,
    /// MI estimates (bits), model accuracies or Fisher p-values per outer fold.
    pub fold_values: Vec<f64>,
    /// Marginal-predictor accuracies per fold (ptt-majority only).
    pub baseline_values: Option<Vec<f64>>,
    pub test: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub search_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub approach: Approach,
    pub seed: u64,
    pub alpha: f64,
    /// p-value per tested candidate, best search score first.
    pub p_values: Vec<f64>,
    pub tau: usize,
    pub threshold: usize,
    pub decision: Decision,
    pub candidates: Vec<CandidateReport>,
    /// Set when fewer than the configured number of candidates survived.
    pub reduced: bool,
    pub failures: Vec<String>,
    pub timing: Timing,
}

impl DetectionReport {
    /// Recompute the decision from the recorded p-values.
    pub fn replay(&self) -> Result<Decision> {
        decide(&self.p_values, self.alpha, self.threshold).map(|(_, d)| d)
    }
}

fn decide(p_values: &[f64], alpha: f64, threshold: usize) -> Result<(usize, Decision)> {
    let tau = holm_bonferroni(p_values, alpha)?.tau;
    let decision = if tau >= threshold { Decision::Leak } else { Decision::NoLeak };
    Ok((tau, decision))
}

fn fold_accuracy(model: &dyn ProbClassifier, test: &Dataset) -> f64 {
    let pred = model.predict(test.rows());
    pred.iter().zip(test.labels()).filter(|(a, b)| a == b).count() as f64 / test.len() as f64
}

/// Per-fold values, optional baseline values and the resulting test for one
/// candidate.
fn test_candidate(
    approach: Approach,
    setup: &Setup,
    folds: &[(Dataset, Dataset)],
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<(Vec<f64>, Option<Vec<f64>>, TestResult)> {
    let model_hp = || match setup {
        Setup::Model(hp) => Ok(hp),
        Setup::Mine(_) => Err(invalid("classifier approach given a MINE configuration")),
    };
    let per_fold: Vec<Result<(f64, f64)>> = folds
        .par_iter()
        .enumerate()
        .map(|(k, (train, test))| {
            let fs = derive_seed(seed, k as u64);
            match approach.mi_method() {
                Some(method) => Ok((estimate_with(method, setup, train, test, cfg, fs)?.value, f64::NAN)),
                None => {
                    let model = fit_model(model_hp()?, train, fs)?;
                    match approach {
                        Approach::PttMajority => {
                            let base = fit_marginal_predictor(train)?;
                            Ok((fold_accuracy(model.as_ref(), test), fold_accuracy(&base, test)))
                        }
                        _ => {
                            let cm = confusion_matrix(test.labels(), &model.predict(test.rows()), test.num_classes())?;
                            Ok((fisher_exact(&cm.binarize(1))?.p_value, f64::NAN))
                        }
                    }
                }
            }
        })
        .collect();
    let pairs = per_fold.into_iter().collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let (baseline, test) = match approach {
        Approach::PttMajority => {
            let base: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let t = corrected_paired_ttest(&values, &base)?;
            (Some(base), t)
        }
        Approach::FetMean | Approach::FetMedian => {
            let mode = if approach == Approach::FetMean { Aggregation::Mean } else { Aggregation::Median };
            let p = aggregate_pvalues(&values, mode)?;
            (
                None,
                TestResult {
                    p_value: p,
                    statistic: p,
                    test: crate::stats::TestKind::FisherExact,
                    degenerate: false,
                },
            )
        }
        _ => (None, ott_pvalue(&values, 0.0)?),
    };
    Ok((values, baseline, test))
}

/// Search once on the whole dataset, refit the top candidates on each outer
/// fold, test each candidate and decide by Holm-Bonferroni rejections.
pub fn run_ild(dataset: &Dataset, cfg: &IldConfig, seed: u64) -> Result<DetectionReport> {
    cfg.validate()?;
    let start = Instant::now();
    let search_method = cfg.approach.mi_method().unwrap_or(MiMethod::MidPoint);
    let ranked = select_setups(search_method, dataset, &cfg.estimator, derive_seed(seed, 0))?;
    let search_secs = start.elapsed().as_secs_f64();

    let splits = SplitPlan::kfold(cfg.outer_folds, derive_seed(seed, 1)).splits(dataset)?;
    let folds: Vec<(Dataset, Dataset)> = splits.iter().map(|s| (dataset.subset(&s.train), dataset.subset(&s.test))).collect();

    let tested: Vec<_> = ranked
        .into_iter()
        .take(cfg.top_j)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|r| {
            let out = test_candidate(cfg.approach, &r.config, &folds, &cfg.estimator, r.seed);
            (r, out)
        })
        .collect();

    let mut candidates = Vec::new();
    let mut failures = Vec::new();
    for (r, out) in tested {
        match out {
            Ok((fold_values, baseline_values, test)) => candidates.push(CandidateReport {
                setup: r.config,
                search_score: r.score,
                seed: r.seed,
                fold_values,
                baseline_values,
                test,
            }),
            Err(e) => failures.push(format!("{}: {e}", r.config.describe())),
        }
    }
    if candidates.is_empty() {
        return Err(Error::AllCandidatesFailed {
            count: failures.len(),
            failures: failures.join("; "),
        });
    }
    let reduced = candidates.len() < cfg.top_j;
    let threshold = if reduced { (candidates.len() / 2).max(1) } else { cfg.threshold };
    let p_values: Vec<f64> = candidates.iter().map(|c| c.test.p_value).collect();
    let (tau, decision) = decide(&p_values, cfg.alpha, threshold)?;
    Ok(DetectionReport {
        approach: cfg.approach,
        seed,
        alpha: cfg.alpha,
        p_values,
        tau,
        threshold,
        decision,
        candidates,
        reduced,
        failures,
        timing: Timing {
            search_secs,
            total_secs: start.elapsed().as_secs_f64(),
        },
    })
}

/// Datasets paired with whether the system truly leaks.
#[derive(Debug, Clone)]
pub struct IldDataset {
    systems: Vec<(Dataset, bool)>,
}

impl IldDataset {
    pub fn new(systems: Vec<(Dataset, bool)>) -> Result<Self> {
        if systems.is_empty() {
            return Err(Error::Empty("ILD dataset"));
        }
        Ok(IldDataset { systems })
    }

    pub fn systems(&self) -> &[(Dataset, bool)] {
        &self.systems
    }

    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IldEvaluation {
    pub accuracy: f64,
    pub fpr: f64,
    pub fnr: f64,
    /// One entry per system; `None` where the pipeline failed.
    pub decisions: Vec<Option<Decision>>,
    /// `(system index, message)` for failed systems, which are left out of
    /// the metrics.
    pub failures: Vec<(usize, String)>,
}

/// Score any detector over an ILD dataset. System `i` is run with seed
/// `derive_seed(seed, i)`.
pub fn evaluate_with<F>(ildset: &IldDataset, seed: u64, detector: F) -> Result<IldEvaluation>
where
    F: Fn(&Dataset, u64) -> Result<Decision> + Sync,
{
    let outcomes: Vec<Result<Decision>> = ildset
        .systems
        .par_iter()
        .enumerate()
        .map(|(i, (d, _))| detector(d, derive_seed(seed, i as u64)))
        .collect();
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    let mut decisions = Vec::new();
    let mut failures = Vec::new();
    for (i, (out, (_, z))) in outcomes.into_iter().zip(&ildset.systems).enumerate() {
        match out {
            Ok(d) => {
                truth.push(usize::from(*z));
                pred.push(usize::from(d.is_leak()));
                decisions.push(Some(d));
            }
            Err(e) => {
                failures.push((i, e.to_string()));
                decisions.push(None);
            }
        }
    }
    if truth.is_empty() {
        return Err(Error::AllCandidatesFailed {
            count: failures.len(),
            failures: failures.iter().map(|(i, m)| format!("system {i}: {m}")).collect::<Vec<_>>().join("; "),
        });
    }
    let m = classification_metrics(&confusion_matrix(&truth, &pred, 2)?)?;
    Ok(IldEvaluation {
        accuracy: m.accuracy,
        fpr: m.fpr,
        fnr: m.fnr,
        decisions,
        failures,
    })
}

pub fn evaluate_ild(ildset: &IldDataset, cfg: &IldConfig, seed: u64) -> Result<IldEvaluation> {
    cfg.validate()?;
    evaluate_with(ildset, seed, |d, s| run_ild(d, cfg, s).map(|r| r.decision))
}

/// Mean absolute error normalised by the label entropy `h_y`.
pub fn nmae(estimates: &[f64], truths: &[f64], h_y: f64) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: truths.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::Empty("estimates"));
    }
    if !(h_y > 0.0) {
        return Err(invalid(format!("label entropy {h_y} must be positive")));
    }
    let total: f64 = estimates.iter().zip(truths).map(|(e, t)| (t - e).abs()).sum();
    Ok(total / estimates.len() as f64 / h_y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_system, SynthConfig, Technique};
    use proptest::prelude::*;

    fn system(eps: f64, seed: u64) -> Dataset {
        generate_system(&SynthConfig::balanced(Technique::Perturbation, 2, 2, eps, seed)).unwrap().0
    }

    fn quick(approach: Approach) -> IldConfig {
        IldConfig {
            top_j: 4,
            threshold: 2,
            outer_folds: 5,
            estimator: EstimatorConfig {
                budget: 4,
                ..EstimatorConfig::default()
            },
            ..IldConfig::new(approach)
        }
    }

    #[test]
    fn nmae_examples() {
        assert_eq!(nmae(&[0.3, 0.7], &[0.3, 0.7], 1.0).unwrap(), 0.0);
        assert!((nmae(&[0.8, 0.8], &[0.0, 0.0], 0.8).unwrap() - 1.0).abs() < 1e-12);
        assert!((nmae(&[0.4], &[0.5], 1.0).unwrap() - 0.1).abs() < 1e-12);
        assert!(nmae(&[0.4], &[0.5], 0.0).is_err());
        assert!(nmae(&[0.4], &[0.5, 0.1], 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(IldConfig::default().validate().is_ok());
        let bad = IldConfig {
            threshold: 11,
            ..IldConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = IldConfig {
            threshold: 0,
            ..IldConfig::default()
        };
        assert!(bad.validate().is_err());
        for a in Approach::ALL {
            assert_eq!(a.name().parse::<Approach>().unwrap(), a);
        }
        let json = serde_json::to_string(&IldConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<IldConfig>(&json).unwrap(), IldConfig::default());
    }

    #[test]
    fn evaluation_of_constant_detectors() {
        let ild = IldDataset::new((0..4).map(|i| (system(1.0, i), false)).collect()).unwrap();
        let e = evaluate_with(&ild, 0, |_, _| Ok(Decision::NoLeak)).unwrap();
        assert_eq!((e.accuracy, e.fpr), (1.0, 0.0));

        let mut systems: Vec<_> = (0..5).map(|i| (system(0.0, i), true)).collect();
        systems.extend((0..5).map(|i| (system(1.0, 10 + i), false)));
        let ild = IldDataset::new(systems).unwrap();
        let e = evaluate_with(&ild, 0, |_, _| Ok(Decision::Leak)).unwrap();
        assert_eq!((e.accuracy, e.fpr, e.fnr), (0.5, 1.0, 0.0));

        let e = evaluate_with(&ild, 0, |d, _| {
            if d.row(0)[0] > 100.0 {
                Ok(Decision::Leak)
            } else {
                Err(invalid("boom"))
            }
        });
        assert!(e.is_err());
        assert!(IldDataset::new(vec![]).is_err());
    }

    #[test]
    fn failed_systems_are_recorded_not_fatal() {
        let ild = IldDataset::new(vec![(system(1.0, 0), false), (system(0.0, 1), true)]).unwrap();
        let first = &ild.systems()[0].0;
        let e = evaluate_with(&ild, 0, |d, _| {
            if std::ptr::eq(d, first) {
                Err(invalid("first system broken"))
            } else {
                Ok(Decision::Leak)
            }
        })
        .unwrap();
        assert_eq!(e.failures.len(), 1);
        assert_eq!(e.failures[0].0, 0);
        assert_eq!(e.decisions, vec![None, Some(Decision::Leak)]);
        assert_eq!(e.accuracy, 1.0);
    }

    #[test]
    fn log_loss_detects_leak_and_independence() {
        let cfg = quick(Approach::LogLoss);
        let leak = run_ild(&system(0.0, 3), &cfg, 1).unwrap();
        assert_eq!(leak.decision, Decision::Leak, "{:?}", leak.p_values);
        assert_eq!(leak.replay().unwrap(), leak.decision);
        assert_eq!(leak.p_values.len(), 4);
        assert!(leak.candidates.iter().all(|c| c.fold_values.len() == 5));

        let none = run_ild(&system(1.0, 3), &cfg, 1).unwrap();
        assert_eq!(none.decision, Decision::NoLeak, "{:?}", none.p_values);
        assert_eq!(none.replay().unwrap(), none.decision);
    }

    #[test]
    fn fet_and_ptt_on_a_leaking_system() {
        for a in [Approach::FetMedian, Approach::PttMajority] {
            let r = run_ild(&system(0.0, 5), &quick(a), 2).unwrap();
            assert_eq!(r.decision, Decision::Leak, "{a}: {:?}", r.p_values);
            if a == Approach::PttMajority {
                assert!(r.candidates.iter().all(|c| c.baseline_values.as_ref().map(Vec::len) == Some(5)));
            }
        }
    }

    #[test]
    fn ptt_is_one_when_no_model_beats_the_marginal() {
        // the Bayes predictor is constant here, so every model predicts the majority class
        let d = crate::synth::two_point_system(2000, 7).unwrap();
        let r = run_ild(&d, &quick(Approach::PttMajority), 3).unwrap();
        assert_eq!(r.decision, Decision::NoLeak);
        let best = &r.candidates[0];
        if best.fold_values == *best.baseline_values.as_ref().unwrap() {
            assert_eq!(best.test.p_value, 1.0);
        }
    }

    #[test]
    fn run_ild_is_deterministic() {
        let d = system(0.5, 8);
        let cfg = quick(Approach::CalLogLoss);
        let a = run_ild(&d, &cfg, 4).unwrap();
        let b = run_ild(&d, &cfg, 4).unwrap();
        assert_eq!(a.p_values, b.p_values);
        assert_eq!(a.candidates, b.candidates);
    }

    proptest! {
        #[test]
        fn decision_replays_and_is_monotone_in_threshold(
            ps in prop::collection::vec(0.0f64..=1.0, 1..15),
            alpha in 0.001f64..0.2,
        ) {
            let j = ps.len();
            let mut prev_leak = true;
            for t in 1..=j {
                let (tau, d) = decide(&ps, alpha, t).unwrap();
                prop_assert_eq!(d.is_leak(), tau >= t);
                // raising the threshold never turns no-leak into leak
                prop_assert!(prev_leak || !d.is_leak());
                prev_leak = d.is_leak();
            }
        }
    }
}
