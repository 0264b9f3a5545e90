//! One-sided t-tests, Fisher's exact test and Holm-Bonferroni correction.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::data::ConfusionMatrix;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    OneSampleT,
    CorrectedPairedT,
    FisherExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub p_value: f64,
    /// t statistic for the t-tests; probability of the observed table for
    /// Fisher's test.
    pub statistic: f64,
    pub test: TestKind,
    /// Set when a zero-variance or single-table convention decided the
    /// p-value rather than the test distribution.
    pub degenerate: bool,
}

/// Upper tail `P(T > t)` of Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    let x = df / (df + t * t);
    let half_tail = 0.5 * beta_reg(df / 2.0, 0.5, x);
    if t > 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t > 0.0 {
        1.0 - student_t_sf(t, df)
    } else {
        student_t_sf(-t, df)
    }
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, var)
}

/// Spread indistinguishable from rounding noise around the mean.
fn is_constant(xs: &[f64], mean: f64) -> bool {
    let scale = xs.iter().fold(mean.abs(), |m, x| m.max(x.abs()));
    xs.iter().all(|x| (x - mean).abs() <= 1e-13 * scale)
}

/// One-sided one-sample t-test of `mean(samples) > mu0`.
pub fn ott_pvalue(samples: &[f64], mu0: f64) -> Result<TestResult> {
    let k = samples.len();
    if k < 2 {
        return Err(invalid(format!("one-sample t-test needs at least 2 samples, got {k}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite sample in t-test".into()));
    }
    let (mean, var) = mean_and_var(samples);
    if is_constant(samples, mean) {
        let p_value = if mean > mu0 { 0.0 } else { 1.0 };
        return Ok(TestResult {
            p_value,
            statistic: if mean > mu0 { f64::INFINITY } else { 0.0 },
            test: TestKind::OneSampleT,
            degenerate: true,
        });
    }
    let t = (mean - mu0) / (var / k as f64).sqrt();
    Ok(TestResult {
        p_value: student_t_sf(t, (k - 1) as f64).clamp(0.0, 1.0),
        statistic: t,
        test: TestKind::OneSampleT,
        degenerate: false,
    })
}

/// Nadeau-Bengio corrected paired t-test of `mean(a - b) > 0` over K folds,
/// with variance inflated by `1/K + 1/(K-1)` for overlapping training sets.
pub fn corrected_paired_ttest(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let k = a.len();
    if k < 2 {
        return Err(invalid(format!("paired t-test needs at least 2 folds, got {k}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite difference in paired t-test".into()));
    }
    let (mean, var) = mean_and_var(&d);
    if is_constant(&d, mean) {
        let p_value = if mean > 0.0 { 0.0 } else { 1.0 };
        return Ok(TestResult {
            p_value,
            statistic: if mean > 0.0 { f64::INFINITY } else { 0.0 },
            test: TestKind::CorrectedPairedT,
            degenerate: true,
        });
    }
    let kf = k as f64;
    let sigma_cor = (var * (1.0 / kf + 1.0 / (kf - 1.0))).sqrt();
    let t = mean / sigma_cor;
    Ok(TestResult {
        p_value: student_t_sf(t, kf - 1.0).clamp(0.0, 1.0),
        statistic: t,
        test: TestKind::CorrectedPairedT,
        degenerate: false,
    })
}

/// Largest table total for which Fisher's test runs in exact rational
/// arithmetic.
pub const FISHER_EXACT_MAX_N: u64 = 1000;

/// Relative tolerance for "as or less probable than observed" in the
/// floating-point path.
const FISHER_FLOAT_SLACK: f64 = 1e-7;

/// Two-sided Fisher exact test on a 2x2 table. Multi-class matrices are
/// collapsed to class 1 against the rest.
pub fn fisher_exact(cm: &ConfusionMatrix) -> Result<TestResult> {
    let (a, b, c, d) = cm.binary_view();
    let n = a + b + c + d;
    if n == 0 {
        return Err(Error::Empty("contingency table"));
    }
    let r1 = a + b;
    let r2 = c + d;
    let c1 = a + c;
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let (p_value, p_obs) = if n <= FISHER_EXACT_MAX_N {
        fisher_rational(a, r1, r2, c1, lo, hi)
    } else {
        fisher_float(a, r1, r2, c1, lo, hi)
    };
    Ok(TestResult {
        p_value: p_value.clamp(0.0, 1.0),
        statistic: p_obs,
        test: TestKind::FisherExact,
        degenerate: lo == hi,
    })
}

/// Every table shares the denominator `C(n, c1)`, so probabilities are
/// compared through their integer numerators `C(r1, x) * C(r2, c1 - x)`.
fn fisher_rational(a: u64, r1: u64, r2: u64, c1: u64, lo: u64, hi: u64) -> (f64, f64) {
    let numerators = hypergeometric_numerators(r1, r2, c1, lo, hi);
    let obs = &numerators[(a - lo) as usize];
    let mut total = BigUint::zero();
    let mut tail = BigUint::zero();
    for num in &numerators {
        total += num;
        if num <= obs {
            tail += num;
        }
    }
    let ratio = |num: &BigUint| {
        BigRational::new(BigInt::from(num.clone()), BigInt::from(total.clone()))
            .to_f64()
            .unwrap_or(f64::NAN)
    };
    (ratio(&tail), ratio(obs))
}

pub(crate) fn hypergeometric_numerators(r1: u64, r2: u64, c1: u64, lo: u64, hi: u64) -> Vec<BigUint> {
    let mut left = binomial(r1, lo);
    let mut right = binomial(r2, c1 - lo);
    let mut out = Vec::with_capacity((hi - lo + 1) as usize);
    for x in lo..=hi {
        out.push(&left * &right);
        if x < hi {
            // C(r1, x+1) = C(r1, x) (r1 - x) / (x + 1); C(r2, k-1) = C(r2, k) k / (r2 - k + 1)
            left = left * BigUint::from(r1 - x) / BigUint::from(x + 1);
            let k = c1 - x;
            right = right * BigUint::from(k) / BigUint::from(r2 - k + 1);
        }
    }
    out
}

fn binomial(n: u64, k: u64) -> BigUint {
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

fn fisher_float(a: u64, r1: u64, r2: u64, c1: u64, lo: u64, hi: u64) -> (f64, f64) {
    let logs: Vec<f64> = (lo..=hi).map(|x| ln_binomial(r1, x) + ln_binomial(r2, c1 - x)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let obs = weights[(a - lo) as usize];
    let tail: f64 = weights.iter().filter(|&&w| w <= obs * (1.0 + FISHER_FLOAT_SLACK)).sum();
    (tail / total, obs / total)
}

/// Holm-Bonferroni step-down result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolmOutcome {
    /// Number of rejected hypotheses.
    pub tau: usize,
    /// Rejection flag per hypothesis, in input order.
    pub rejected: Vec<bool>,
    /// Input indices in ascending p-value order (stable).
    pub order: Vec<usize>,
    pub sorted_p: Vec<f64>,
    /// `alpha / (J + 1 - j)` for rank `j = 1..J`.
    pub thresholds: Vec<f64>,
}

pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<HolmOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha {alpha} not in (0, 1)")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(invalid(format!("p-value {p} outside [0, 1]")));
    }
    let j = p_values.len();
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&x, &y| p_values[x].total_cmp(&p_values[y]));
    let sorted_p: Vec<f64> = order.iter().map(|&i| p_values[i]).collect();
    let thresholds: Vec<f64> = (0..j).map(|rank| alpha / (j - rank) as f64).collect();
    let tau = sorted_p.iter().zip(&thresholds).take_while(|(p, t)| p < t).count();
    let mut rejected = vec![false; j];
    for &i in &order[..tau] {
        rejected[i] = true;
    }
    Ok(HolmOutcome {
        tau,
        rejected,
        order,
        sorted_p,
        thresholds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Mean,
    Median,
}

pub fn aggregate_pvalues(ps: &[f64], mode: Aggregation) -> Result<f64> {
    if ps.is_empty() {
        return Err(Error::Empty("p-values"));
    }
    let v = match mode {
        Aggregation::Mean => ps.iter().sum::<f64>() / ps.len() as f64,
        Aggregation::Median => {
            let mut s = ps.to_vec();
            s.sort_by(f64::total_cmp);
            let mid = s.len() / 2;
            if s.len().is_multiple_of(2) {
                (s[mid - 1] + s[mid]) / 2.0
            } else {
                s[mid]
            }
        }
    };
    Ok(v.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn t_density(x: f64, df: f64) -> f64 {
        let c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
        (c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
    }

    /// Composite Simpson on [0, |t|].
    fn t_cdf_by_quadrature(t: f64, df: f64) -> f64 {
        let n = 20_000;
        let h = t.abs() / n as f64;
        let mut s = t_density(0.0, df) + t_density(t.abs(), df);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * t_density(i as f64 * h, df);
        }
        let half = s * h / 3.0;
        if t >= 0.0 {
            0.5 + half
        } else {
            0.5 - half
        }
    }

    #[test]
    fn t_cdf_matches_quadrature() {
        for &df in &[1.0, 2.0, 3.0, 5.0, 9.0, 30.0] {
            for i in -16..=16 {
                let t = i as f64 * 0.5;
                let diff = (student_t_cdf(t, df) - t_cdf_by_quadrature(t, df)).abs();
                assert!(diff < 1e-8, "df={df} t={t} diff={diff}");
            }
        }
    }

    #[test]
    fn ott_examples() {
        let r = ott_pvalue(&[0.0; 10], 0.0).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(r.degenerate);
        assert_eq!(ott_pvalue(&[0.3; 10], 0.0).unwrap().p_value, 0.0);

        // mean 5 sd above zero
        let xs: Vec<f64> = (0..10).map(|i| 5.0 + if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(ott_pvalue(&xs, 0.0).unwrap().p_value < 1e-3);

        // 9 df upper 5% point
        assert!((student_t_sf(1.833, 9.0) - 0.05).abs() < 2e-3);
        assert!(ott_pvalue(&[1.0], 0.0).is_err());
    }

    #[test]
    fn ott_false_positive_rate_under_null() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut rejections = 0;
        for _ in 0..1000 {
            let xs: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
            if ott_pvalue(&xs, 0.0).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / 1000.0;
        assert!((0.03..=0.07).contains(&rate), "rate {rate}");
    }

    #[test]
    fn ptt_examples() {
        let a = [0.7, 0.8, 0.75, 0.9];
        let r = corrected_paired_ttest(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(r.degenerate);

        let a: Vec<f64> = (0..10).map(|i| 0.5 + 0.01 * (i as f64).sin()).collect();
        let b: Vec<f64> = (0..10).map(|i| 0.45 + 0.013 * (i as f64).cos()).collect();
        let r = corrected_paired_ttest(&a, &b).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let (m, v) = mean_and_var(&d);
        let naive_t = m / (v / 10.0).sqrt();
        let factor = (naive_t / r.statistic).powi(2);
        assert!((factor - 10.0 * (0.1 + 1.0 / 9.0)).abs() < 1e-12);

        let a: Vec<f64> = (0..10).map(|i| 1.0 + 1e-6 * (i as f64 - 4.5)).collect();
        let b = [0.0; 10];
        assert!(corrected_paired_ttest(&a, &b).unwrap().p_value < 1e-6);
        assert!(corrected_paired_ttest(&a, &b[..3]).is_err());
    }

    #[test]
    fn fisher_examples() {
        let r = fisher_exact(&ConfusionMatrix::binary(95, 0, 5, 0)).unwrap();
        assert_eq!(r.p_value, 1.0);
        let r = fisher_exact(&ConfusionMatrix::binary(5, 0, 0, 5)).unwrap();
        assert!((r.p_value - 2.0 / 252.0).abs() < 1e-15);
        assert!((r.statistic - 1.0 / 252.0).abs() < 1e-15);
        let r = fisher_exact(&ConfusionMatrix::binary(40, 0, 17, 0)).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(fisher_exact(&ConfusionMatrix::binary(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn fisher_float_path_agrees_with_rational_near_the_switch() {
        for &(a, b, c, d) in &[(300u64, 200, 180, 320), (250, 250, 250, 250), (490, 10, 480, 20)] {
            let (r1, r2, c1) = (a + b, c + d, a + c);
            let lo = c1.saturating_sub(r2);
            let hi = r1.min(c1);
            let exact = fisher_rational(a, r1, r2, c1, lo, hi).0;
            let float = fisher_float(a, r1, r2, c1, lo, hi).0;
            assert!((exact - float).abs() <= 1e-9 * exact.max(1e-300), "{exact} vs {float}");
        }
    }

    #[test]
    fn fisher_large_table_is_finite() {
        let r = fisher_exact(&ConfusionMatrix::binary(4000, 1000, 900, 4100)).unwrap();
        assert!(r.p_value >= 0.0 && r.p_value < 1e-100);
        let r = fisher_exact(&ConfusionMatrix::binary(9500, 0, 500, 0)).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn fisher_small_tables_match_factorial_oracle() {
        fn fact(n: u64) -> BigInt {
            (1..=n).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
        }
        fn prob(a: u64, b: u64, c: u64, d: u64) -> BigRational {
            let n = a + b + c + d;
            BigRational::new(
                fact(a + b) * fact(c + d) * fact(a + c) * fact(b + d),
                fact(n) * fact(a) * fact(b) * fact(c) * fact(d),
            )
        }
        for n in 1..=12u64 {
            for a in 0..=n {
                for b in 0..=n - a {
                    for c in 0..=n - a - b {
                        let d = n - a - b - c;
                        let obs = prob(a, b, c, d);
                        let (r1, c1) = (a + b, a + c);
                        let mut p = BigRational::zero();
                        // every table with the same margins, indexed by its top-left cell
                        for x in 0..=r1.min(c1) {
                            if r1 + c1 > n + x {
                                continue;
                            }
                            let q = prob(x, r1 - x, c1 - x, n + x - r1 - c1);
                            if q <= obs {
                                p += q;
                            }
                        }
                        let got = fisher_exact(&ConfusionMatrix::binary(a, b, c, d)).unwrap().p_value;
                        assert_eq!(got, p.to_f64().unwrap(), "table {a} {b} {c} {d}");
                    }
                }
            }
        }
    }

    #[test]
    fn holm_examples() {
        assert_eq!(holm_bonferroni(&[0.0; 5], 0.01).unwrap().tau, 5);
        assert_eq!(holm_bonferroni(&[1.0; 5], 0.01).unwrap().tau, 0);
        let p = [0.0001, 0.0009, 0.001, 0.0012, 0.0015, 0.0018, 0.005, 0.02, 0.5, 0.9];
        let h = holm_bonferroni(&p, 0.01).unwrap();
        assert_eq!(h.tau, 6);
        assert!((h.thresholds[6] - 0.0025).abs() < 1e-15);
        assert_eq!(h.rejected.iter().filter(|&&r| r).count(), 6);
        assert!(holm_bonferroni(&[0.5, 1.5], 0.01).is_err());
    }

    #[test]
    fn aggregate_examples() {
        assert!((aggregate_pvalues(&[0.2, 0.4], Aggregation::Median).unwrap() - 0.3).abs() < 1e-15);
        assert!((aggregate_pvalues(&[0.7; 3], Aggregation::Mean).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(aggregate_pvalues(&[0.7; 3], Aggregation::Median).unwrap(), 0.7);
        assert!((aggregate_pvalues(&[0.0, 0.0, 1.0], Aggregation::Mean).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(aggregate_pvalues(&[], Aggregation::Mean).is_err());
    }

    proptest! {
        #[test]
        fn holm_tau_is_monotone(ps in proptest::collection::vec(0.0f64..=1.0, 1..20), shrink in 0.0f64..=1.0) {
            let smaller: Vec<f64> = ps.iter().map(|p| p * shrink).collect();
            let a = holm_bonferroni(&ps, 0.05).unwrap();
            let b = holm_bonferroni(&smaller, 0.05).unwrap();
            prop_assert!(b.tau >= a.tau);
            // rejections are a prefix of the sorted order
            for (rank, &i) in a.order.iter().enumerate() {
                prop_assert_eq!(a.rejected[i], rank < a.tau);
            }
        }

        #[test]
        fn pvalues_stay_in_unit_interval(xs in proptest::collection::vec(-5.0f64..5.0, 2..15)) {
            let r = ott_pvalue(&xs, 0.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            let zeros = vec![0.0; xs.len()];
            let r = corrected_paired_ttest(&xs, &zeros).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}
