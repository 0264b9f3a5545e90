//! Mutual-information estimation and information-leakage detection.
//!
//! A system leaks information when its observable outputs (features) carry
//! information about secret inputs (labels). This crate estimates the mutual
//! information `I(X; Y)` between the features and labels of a classification
//! dataset by approximating the Bayes-optimal predictor with a portfolio of
//! probabilistic classifiers, and turns repeated cross-validated estimates into
//! a leak / no-leak decision with one-sided tests and Holm-Bonferroni
//! correction.
//!
//! Module map:
//!
//! * [`data`]: datasets, resampling splits, confusion matrices and metrics.
//! * [`synth`]: multivariate-normal system simulators with exact ground truth.
//! * [`models`]: the classifier portfolio and random-search HPO.
//! * [`calibrate`]: post-hoc probability calibration.
//! * [`miest`]: the MI estimators (log-loss, mid-point, GMM, MINE, PC-softmax).
//! * [`stats`]: t-tests, Fisher's exact test, Holm-Bonferroni.
//! * [`detect`]: the end-to-end detection pipeline and NMAE.
//! * [`sweep`]: synthetic benchmark sweeps.

pub mod calibrate;
pub mod data;
pub mod detect;
mod error;
pub mod miest;
pub mod models;
pub mod rng;
pub mod stats;
pub mod sweep;
pub mod synth;

pub use calibrate::{apply_calibrator, fit_calibrator, CalibrationMethod, CalibrationOptions, Calibrator};
pub use data::{
    class_marginal, classification_metrics, confusion_matrix, entropy_bits, ClassificationMetrics,
    ConfusionMatrix, Dataset, ProbMatrix, Rows, Split, SplitKind, SplitPlan,
};
pub use detect::{evaluate_ild, nmae, run_ild, Approach, Decision, DetectionReport, IldConfig, IldDataset};
pub use error::{Error, Result};
pub use miest::{LogLossForm, MiEstimate};
pub use models::{Family, Hyperparameters, ModelCandidate, ProbClassifier};
pub use stats::{HolmOutcome, TestResult};
pub use synth::{GenMethod, GroundTruthModel, SynthConfig, Technique};
