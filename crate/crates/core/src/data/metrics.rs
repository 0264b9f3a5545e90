use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Counts of ground truth (rows) against prediction (columns).
///
/// For two classes the cells are `(tn, fp; fn, tp)` with class `1` positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn binary(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        ConfusionMatrix {
            num_classes: 2,
            counts: vec![tn, fp, fn_, tp],
        }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::LengthMismatch {
                left: counts.len(),
                right: num_classes * num_classes,
            });
        }
        Ok(ConfusionMatrix { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tn(&self) -> u64 {
        self.binary_view().0
    }

    pub fn fp(&self) -> u64 {
        self.binary_view().1
    }

    pub fn fn_(&self) -> u64 {
        self.binary_view().2
    }

    pub fn tp(&self) -> u64 {
        self.binary_view().3
    }

    /// `(tn, fp, fn, tp)` with class 1 as the positive class; multi-class
    /// matrices are collapsed one-vs-rest.
    pub fn binary_view(&self) -> (u64, u64, u64, u64) {
        let b = self.binarize(1.min(self.num_classes - 1));
        (b.counts[0], b.counts[1], b.counts[2], b.counts[3])
    }

    /// Collapse to a 2x2 matrix of `positive` against every other class.
    pub fn binarize(&self, positive: usize) -> ConfusionMatrix {
        if self.num_classes == 2 && positive == 1 {
            return self.clone();
        }
        let (mut tn, mut fp, mut fn_, mut tp) = (0, 0, 0, 0);
        for t in 0..self.num_classes {
            for p in 0..self.num_classes {
                let c = self.get(t, p);
                match (t == positive, p == positive) {
                    (false, false) => tn += c,
                    (false, true) => fp += c,
                    (true, false) => fn_ += c,
                    (true, true) => tp += c,
                }
            }
        }
        ConfusionMatrix::binary(tn, fp, fn_, tp)
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|m| self.get(m, m)).sum()
    }
}

/// Build the confusion matrix of `truth` against `pred`.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    let mut counts = vec![0u64; num_classes * num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_classes || p >= num_classes {
            return Err(invalid(format!("label ({t}, {p}) outside [0, {num_classes})")));
        }
        counts[t * num_classes + p] += 1;
    }
    Ok(ConfusionMatrix { num_classes, counts })
}

/// Standard metrics derived from a confusion matrix.
///
/// `fpr`, `fnr` and `mcc` fall back to 0 when their denominator vanishes; the
/// `degenerate` flag records that this happened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub error: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub mcc: f64,
    pub ber: f64,
    pub degenerate: bool,
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let n = total as f64;
    let accuracy = cm.trace() as f64 / n;
    let (tn, fp, fn_, tp) = cm.binary_view();
    let (tn, fp, fn_, tp) = (tn as f64, fp as f64, fn_ as f64, tp as f64);
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            degenerate = true;
            0.0
        } else {
            num / den
        }
    };
    let fpr = ratio(fp, fp + tn);
    let fnr = ratio(fn_, fn_ + tp);

    let (mcc, ber) = if cm.num_classes() == 2 {
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        let mcc = ratio(tp * tn - fp * fn_, den);
        (mcc, (fpr + fnr) / 2.0)
    } else {
        multiclass_mcc_ber(cm, &mut degenerate)
    };
    Ok(ClassificationMetrics {
        accuracy,
        error: 1.0 - accuracy,
        fpr,
        fnr,
        mcc,
        ber,
        degenerate,
    })
}

/// Gorodkin's R_K and the balanced error `1 - mean recall` over the classes
/// present in the ground truth. Both reduce to the binary definitions at M=2.
fn multiclass_mcc_ber(cm: &ConfusionMatrix, degenerate: &mut bool) -> (f64, f64) {
    let m = cm.num_classes();
    let s = cm.total() as f64;
    let c = cm.trace() as f64;
    let t: Vec<f64> = (0..m).map(|k| (0..m).map(|j| cm.get(k, j)).sum::<u64>() as f64).collect();
    let p: Vec<f64> = (0..m).map(|k| (0..m).map(|i| cm.get(i, k)).sum::<u64>() as f64).collect();
    let tp_sum: f64 = t.iter().zip(&p).map(|(a, b)| a * b).sum();
    let den = ((s * s - p.iter().map(|v| v * v).sum::<f64>()) * (s * s - t.iter().map(|v| v * v).sum::<f64>())).sqrt();
    let mcc = if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        (c * s - tp_sum) / den
    };
    let recalls: Vec<f64> = (0..m)
        .filter(|&k| t[k] > 0.0)
        .map(|k| cm.get(k, k) as f64 / t[k])
        .collect();
    let ber = 1.0 - recalls.iter().sum::<f64>() / recalls.len() as f64;
    (mcc, ber)
}
