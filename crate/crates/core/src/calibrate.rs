//! Post-hoc probability calibration.
//!
//! Binary problems calibrate the class-1 probability and set class 0 to its
//! complement. With more classes every class gets its own one-vs-rest map and
//! rows are renormalized afterwards. Temperature scaling always works on the
//! whole row.

use serde::{Deserialize, Serialize};

use crate::data::{ProbMatrix, PROB_CLIP};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMethod {
    Isotonic,
    Platt,
    Beta,
    Temperature,
    Histogram,
}

impl CalibrationMethod {
    pub const ALL: [CalibrationMethod; 5] = [
        CalibrationMethod::Isotonic,
        CalibrationMethod::Platt,
        CalibrationMethod::Beta,
        CalibrationMethod::Temperature,
        CalibrationMethod::Histogram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CalibrationMethod::Isotonic => "isotonic",
            CalibrationMethod::Platt => "platt",
            CalibrationMethod::Beta => "beta",
            CalibrationMethod::Temperature => "temperature",
            CalibrationMethod::Histogram => "histogram",
        }
    }
}

impl std::str::FromStr for CalibrationMethod {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        CalibrationMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown calibration method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct CalibrationOptions {
    /// Equal-frequency bins for histogram binning.
    pub bins: usize,
    /// Pseudo-observations at the overall class frequency added to every
    /// isotonic block and histogram bin. Zero keeps the raw frequencies;
    /// a positive value keeps fitted probabilities away from 0 and 1.
    pub pseudo_count: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            bins: 10,
            pseudo_count: 0.0,
        }
    }
}

/// A fitted map from one class's probability to a calibrated probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassMap {
    Constant { value: f64 },
    /// Piecewise-linear through `(x, y)` knots, flat outside.
    Isotonic { x: Vec<f64>, y: Vec<f64> },
    /// `sigmoid(a * logit(p) + b)`
    Platt { a: f64, b: f64 },
    /// `sigmoid(a ln p - b ln(1 - p) + c)`
    Beta { a: f64, b: f64, c: f64 },
    /// Bin `i` covers scores up to `upper[i]`.
    Histogram { upper: Vec<f64>, value: Vec<f64> },
}

impl ClassMap {
    pub fn apply(&self, p: f64) -> f64 {
        let v = match self {
            ClassMap::Constant { value } => *value,
            ClassMap::Isotonic { x, y } => interpolate(x, y, p),
            ClassMap::Platt { a, b } => sigmoid(a * logit(p) + b),
            ClassMap::Beta { a, b, c } => {
                let q = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                sigmoid(a * q.ln() - b * (1.0 - q).ln() + c)
            }
            ClassMap::Histogram { upper, value } => {
                let i = upper.partition_point(|&u| u < p).min(value.len() - 1);
                value[i]
            }
        };
        v.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub method: CalibrationMethod,
    pub num_classes: usize,
    /// One map per calibrated class; a single class-1 map when binary.
    pub maps: Vec<ClassMap>,
    pub temperature: Option<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let q = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    q.ln() - (1.0 - q).ln()
}

fn interpolate(x: &[f64], y: &[f64], p: f64) -> f64 {
    let i = x.partition_point(|&v| v <= p);
    if i == 0 {
        y[0]
    } else if i == x.len() {
        y[y.len() - 1]
    } else {
        let (x0, x1) = (x[i - 1], x[i]);
        y[i - 1] + (y[i] - y[i - 1]) * (p - x0) / (x1 - x0)
    }
}

/// Pool-adjacent-violators on `(score, target)` pairs.
fn fit_isotonic(scores: &[f64], targets: &[f64], pseudo: f64) -> ClassMap {
    let base = targets.iter().sum::<f64>() / targets.len() as f64;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // equal scores form one starting block of (sum, weight, min, max)
    let mut groups: Vec<(f64, f64, f64, f64)> = Vec::new();
    for &i in &idx {
        let s = scores[i];
        match groups.last_mut() {
            Some(g) if g.3 == s => {
                g.0 += targets[i];
                g.1 += 1.0;
            }
            _ => groups.push((targets[i], 1.0, s, s)),
        }
    }
    let mut blocks: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(groups.len());
    for g in groups {
        blocks.push(g);
        while blocks.len() > 1 {
            let n = blocks.len();
            let (last, prev) = (blocks[n - 1], blocks[n - 2]);
            // equal neighbours are pooled too so blocks stay as large as possible
            if prev.0 / prev.1 < last.0 / last.1 {
                break;
            }
            blocks[n - 2] = (prev.0 + last.0, prev.1 + last.1, prev.2, last.3);
            blocks.pop();
        }
    }
    let mut x = Vec::with_capacity(2 * blocks.len());
    let mut y = Vec::with_capacity(2 * blocks.len());
    for &(sum, w, lo, hi) in &blocks {
        let v = (sum + pseudo * base) / (w + pseudo);
        x.push(lo);
        y.push(v);
        if hi > lo {
            x.push(hi);
            y.push(v);
        }
    }
    ClassMap::Isotonic { x, y }
}

fn fit_histogram(scores: &[f64], targets: &[f64], bins: usize, pseudo: f64) -> ClassMap {
    let n = scores.len();
    let base = targets.iter().sum::<f64>() / n as f64;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut upper = Vec::new();
    let mut value = Vec::new();
    let mut start = 0;
    for b in 1..=bins {
        let mut end = (b * n) / bins;
        if end <= start {
            continue;
        }
        // keep equal scores in one bin
        while end < n && scores[idx[end]] == scores[idx[end - 1]] {
            end += 1;
        }
        let sum: f64 = idx[start..end].iter().map(|&i| targets[i]).sum();
        value.push((sum + pseudo * base) / ((end - start) as f64 + pseudo));
        upper.push(if end < n {
            0.5 * (scores[idx[end - 1]] + scores[idx[end]])
        } else {
            f64::INFINITY
        });
        start = end;
        if start == n {
            break;
        }
    }
    ClassMap::Histogram { upper, value }
}

/// Maximum-likelihood logistic regression with intercept by Newton's method.
/// Returns `[w_1, .., w_k, intercept]`.
fn fit_logistic(features: &[Vec<f64>], targets: &[f64]) -> Result<Vec<f64>> {
    let k = features.first().map_or(0, Vec::len) + 1;
    let mut w = vec![0.0; k];
    let ridge = 1e-8;
    let nll = |w: &[f64]| -> f64 {
        let mut s = 0.0;
        for (f, &t) in features.iter().zip(targets) {
            let z: f64 = f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[k - 1];
            // log(1 + e^z) - t z, computed stably
            s += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        }
        s + 0.5 * ridge * w.iter().map(|v| v * v).sum::<f64>()
    };
    let mut cur = nll(&w);
    for _ in 0..100 {
        let mut g = vec![0.0; k];
        let mut h = nalgebra::DMatrix::<f64>::zeros(k, k);
        for (f, &t) in features.iter().zip(targets) {
            let z: f64 = f.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[k - 1];
            let p = sigmoid(z);
            let x: Vec<f64> = f.iter().cloned().chain([1.0]).collect();
            for a in 0..k {
                g[a] += (p - t) * x[a];
                for b in 0..k {
                    h[(a, b)] += p * (1.0 - p) * x[a] * x[b];
                }
            }
        }
        for a in 0..k {
            g[a] += ridge * w[a];
            h[(a, a)] += ridge;
        }
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&nalgebra::DVector::from_vec(g.clone())),
            None => nalgebra::DVector::from_vec(g.clone()),
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = w.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let v = nll(&cand);
            if v <= cur {
                improved = cur - v > 1e-12 * (1.0 + cur.abs());
                w = cand;
                cur = v;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(crate::Error::Numerical("logistic calibration diverged".into()));
    }
    Ok(w)
}

fn fit_map(method: CalibrationMethod, scores: &[f64], targets: &[f64], opts: &CalibrationOptions) -> Result<ClassMap> {
    let positives = targets.iter().filter(|&&t| t > 0.5).count();
    if positives == 0 || positives == targets.len() {
        return match method {
            CalibrationMethod::Isotonic | CalibrationMethod::Histogram => Ok(ClassMap::Constant {
                value: if positives == 0 { 0.0 } else { 1.0 },
            }),
            _ => Err(invalid(format!(
                "{} calibration needs both outcomes in the calibration data",
                method.name()
            ))),
        };
    }
    Ok(match method {
        CalibrationMethod::Isotonic => fit_isotonic(scores, targets, opts.pseudo_count),
        CalibrationMethod::Histogram => fit_histogram(scores, targets, opts.bins, opts.pseudo_count),
        CalibrationMethod::Platt => {
            let f: Vec<Vec<f64>> = scores.iter().map(|&p| vec![logit(p)]).collect();
            let w = fit_logistic(&f, targets)?;
            ClassMap::Platt { a: w[0], b: w[1] }
        }
        CalibrationMethod::Beta => {
            let f: Vec<Vec<f64>> = scores
                .iter()
                .map(|&p| {
                    let q = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                    vec![q.ln(), -(1.0 - q).ln()]
                })
                .collect();
            let w = fit_logistic(&f, targets)?;
            ClassMap::Beta { a: w[0], b: w[1], c: w[2] }
        }
        CalibrationMethod::Temperature => unreachable!("temperature is fitted jointly"),
    })
}

fn log_scores(probs: &ProbMatrix) -> Vec<f64> {
    probs.as_slice().iter().map(|&p| p.max(f64::MIN_POSITIVE).ln()).collect()
}

fn temperature_nll(z: &[f64], labels: &[usize], m: usize, t: f64) -> f64 {
    let mut s = 0.0;
    let mut row = vec![0.0; m];
    for (i, &y) in labels.iter().enumerate() {
        for k in 0..m {
            row[k] = z[i * m + k] / t;
        }
        s += crate::data::log_sum_exp(&row) - row[y];
    }
    s / labels.len() as f64
}

/// Golden-section search for the temperature on a log scale.
fn fit_temperature(probs: &ProbMatrix, labels: &[usize]) -> f64 {
    let m = probs.n_classes();
    let z: Vec<f64> = log_scores(probs).into_iter().map(|v| v.max(PROB_CLIP.ln())).collect();
    let f = |u: f64| temperature_nll(&z, labels, m, u.exp());
    let (mut a, mut b) = (-7.0f64, 7.0f64);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-9 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    (0.5 * (a + b)).exp()
}

/// Fit a calibrator on held-out probabilities and their true labels.
pub fn fit_calibrator(method: CalibrationMethod, probs: &ProbMatrix, labels: &[usize], opts: &CalibrationOptions) -> Result<Calibrator> {
    let m = probs.n_classes();
    if probs.len() != labels.len() {
        return Err(crate::Error::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(crate::Error::Empty("calibration data"));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= m) {
        return Err(invalid(format!("label {y} out of range for {m} classes")));
    }
    if !(opts.pseudo_count >= 0.0 && opts.pseudo_count.is_finite()) {
        return Err(invalid("pseudo-count must be finite and non-negative"));
    }
    if method == CalibrationMethod::Histogram && opts.bins == 0 {
        return Err(invalid("histogram binning needs at least one bin"));
    }
    if method == CalibrationMethod::Temperature {
        if labels.iter().all(|&y| y == labels[0]) {
            return Err(invalid("temperature calibration needs more than one class in the calibration data"));
        }
        return Ok(Calibrator {
            method,
            num_classes: m,
            maps: Vec::new(),
            temperature: Some(fit_temperature(probs, labels)),
        });
    }
    let classes: Vec<usize> = if m == 2 { vec![1] } else { (0..m).collect() };
    let mut maps = Vec::with_capacity(classes.len());
    for c in classes {
        let scores: Vec<f64> = probs.rows().map(|r| r[c]).collect();
        let targets: Vec<f64> = labels.iter().map(|&y| f64::from(u8::from(y == c))).collect();
        maps.push(fit_map(method, &scores, &targets, opts)?);
    }
    Ok(Calibrator {
        method,
        num_classes: m,
        maps,
        temperature: None,
    })
}

/// Calibrated probabilities; rows always lie on the simplex.
pub fn apply_calibrator(cal: &Calibrator, probs: &ProbMatrix) -> Result<ProbMatrix> {
    let m = probs.n_classes();
    if m != cal.num_classes {
        return Err(invalid(format!(
            "calibrator fitted for {} classes applied to {m}",
            cal.num_classes
        )));
    }
    if let Some(t) = cal.temperature {
        let z: Vec<f64> = log_scores(probs).into_iter().map(|v| v / t).collect();
        return Ok(ProbMatrix::from_log_weights(z, m));
    }
    let mut out = Vec::with_capacity(probs.len() * m);
    for r in probs.rows() {
        if m == 2 {
            let p1 = cal.maps[0].apply(r[1]);
            out.extend([1.0 - p1, p1]);
        } else {
            let row: Vec<f64> = r.iter().zip(&cal.maps).map(|(&p, f)| f.apply(p).max(PROB_CLIP)).collect();
            out.extend(row);
        }
    }
    Ok(ProbMatrix::from_weights(out, m))
}
