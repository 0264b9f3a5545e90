//! Acceptance suite. Every test prints one `[PASS]` / `[FAIL]` line and then
//! asserts on the same condition. Run with `--nocapture` to see the lines.

use std::time::{Duration, Instant};

use leakdetect::calibrate::{apply_calibrator, fit_calibrator, CalibrationMethod, CalibrationOptions};
use leakdetect::data::{class_marginal, confusion_matrix, Dataset, ProbMatrix, SplitPlan};
use leakdetect::detect::{run_ild, Approach, Decision, IldConfig, IldDataset};
use leakdetect::miest::{cond_entropy_bounds, estimate_with, mi_logloss, mi_midpoint, select_setups, EstimatorConfig, LogLossForm, MiMethod};
use leakdetect::models::mlp::loss_and_grad;
use leakdetect::models::{fit_gmm, fit_model, CovarianceType, EmOptions, Head, Mlp};
use leakdetect::rng::{derive_seed, seeded};
use leakdetect::stats::{fisher_exact, holm_bonferroni, student_t_cdf};
use leakdetect::sweep::{mean_nmae, run_sweep, SweepGrid};
use leakdetect::synth::{generate_system, ground_truth_mi, two_point_posterior, two_point_system, SynthConfig, Technique};
use leakdetect::{evaluate_ild, ConfusionMatrix};
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

fn verdict(n: usize, title: &str, ok: bool, elapsed: Duration, limit: Duration, details: &str) {
    let within = elapsed <= limit;
    let tag = if ok && within { "PASS" } else { "FAIL" };
    println!(
        "[{tag}] criterion {n}: {title} ({:.1}s of {:.0}s) {details}",
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    assert!(ok, "criterion {n} failed: {details}");
    assert!(within, "criterion {n} exceeded its time limit");
}

// ---------------------------------------------------------------------------
// 1: discrete two-point system at N = 10,000

/// Ten-fold cross-fitting: each row is predicted by a model that never saw it.
fn cross_fit_folds(data: &Dataset, seed: u64) -> Vec<(Dataset, Dataset)> {
    SplitPlan::kfold(10, seed)
        .splits(data)
        .unwrap()
        .iter()
        .map(|s| (data.subset(&s.train), data.subset(&s.test)))
        .collect()
}

#[test]
fn two_point_worked_example() {
    let start = Instant::now();
    let data = two_point_system(10_000, 2024).unwrap();
    let cfg = EstimatorConfig::default();
    let marginal = class_marginal(&data).unwrap();
    let folds = cross_fit_folds(&data, 7);
    let mut notes = Vec::new();
    let mut ok = true;

    // (a) mid-point from the out-of-fold error of the selected portfolio model
    let best = select_setups(MiMethod::MidPoint, &data, &cfg, 11).unwrap().remove(0);
    let hp = match &best.config {
        leakdetect::miest::Setup::Model(hp) => hp.clone(),
        other => panic!("unexpected setup {other:?}"),
    };
    let mut wrong = 0usize;
    for (k, (train, test)) in folds.iter().enumerate() {
        let m = fit_model(&hp, train, derive_seed(best.seed, k as u64)).unwrap();
        wrong += m.predict(test.rows()).iter().zip(test.labels()).filter(|(a, b)| a != b).count();
    }
    let mid = mi_midpoint(wrong as f64 / data.len() as f64, &marginal).unwrap().value;
    let a_ok = (mid - 0.0932).abs() <= 0.01;
    ok &= a_ok;
    notes.push(format!("mid-point {mid:.4}"));

    // (b) log-loss of the exact conditionals
    let mut rows = Vec::with_capacity(2 * data.len());
    for r in data.rows().iter() {
        rows.extend(two_point_posterior(r[0]));
    }
    let oracle = ProbMatrix::new(rows, 2).unwrap();
    let ll = mi_logloss(&oracle, data.labels(), &marginal, LogLossForm::CrossEntropy).unwrap().value;
    let b_ok = (ll - 0.0519).abs() <= 0.005;
    ok &= b_ok;
    notes.push(format!("oracle log-loss {ll:.4}"));

    // (c) isotonic-calibrated log-loss of the selected model, cross-fitted
    let mut total = 0.0;
    for (k, (train, test)) in folds.iter().enumerate() {
        let e = estimate_with(MiMethod::CalLogLoss, &best.config, train, test, &cfg, derive_seed(best.seed, k as u64)).unwrap();
        total += e.value * test.len() as f64;
    }
    let cal = total / data.len() as f64;
    let c_ok = (cal - 0.052).abs() <= 0.01;
    ok &= c_ok;
    notes.push(format!("cal-log-loss {cal:.4}"));

    // (d) Fisher on the Bayes predictor, then the two detection pipelines
    let bayes: Vec<usize> = data.rows().iter().map(|r| usize::from(two_point_posterior(r[0])[1] > 0.5)).collect();
    let fet = fisher_exact(&confusion_matrix(data.labels(), &bayes, 2).unwrap()).unwrap().p_value;
    let ptt = run_ild(&data, &IldConfig::new(Approach::PttMajority), 5).unwrap();
    let cll = run_ild(&data, &IldConfig::new(Approach::CalLogLoss), 5).unwrap();
    let d_ok = fet > 0.9 && ptt.decision == Decision::NoLeak && cll.decision == Decision::Leak;
    ok &= d_ok;
    notes.push(format!(
        "FET p {fet:.3}, ptt-majority {:?} (tau {}), cal-log-loss {:?} (tau {})",
        ptt.decision, ptt.tau, cll.decision, cll.tau
    ));

    verdict(1, "two-point worked example", ok, start.elapsed(), Duration::from_secs(120), &notes.join(", "));
}

// ---------------------------------------------------------------------------
// 2: ground-truth MI against an independent Monte-Carlo integral

/// `I(X;Y)` from `10^6` fresh draws of the model, using 2-d Gaussian densities
/// written out by hand.
fn monte_carlo_mi(means: &[Vec<f64>], cov: &[f64], prior: &[f64], seed: u64) -> f64 {
    let (a, b, d) = (cov[0], cov[1], cov[3]);
    let det = a * d - b * b;
    let inv = [d / det, -b / det, a / det];
    let l11 = a.sqrt();
    let l21 = b / l11;
    let l22 = (d - l21 * l21).sqrt();
    let log_kernel = |x: [f64; 2], mu: &[f64]| {
        let (u, v) = (x[0] - mu[0], x[1] - mu[1]);
        -0.5 * (inv[0] * u * u + 2.0 * inv[1] * u * v + inv[2] * v * v)
    };
    let mut rng = seeded(seed);
    let n = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut y = 0;
        let mut c = prior[0];
        while u >= c && y + 1 < prior.len() {
            y += 1;
            c += prior[y];
        }
        let z0: f64 = StandardNormal.sample(&mut rng);
        let z1: f64 = StandardNormal.sample(&mut rng);
        let x = [means[y][0] + l11 * z0, means[y][1] + l21 * z0 + l22 * z1];
        let own = log_kernel(x, &means[y]);
        let mix: f64 = means.iter().zip(prior).map(|(mu, p)| p * (log_kernel(x, mu) - own).exp()).sum();
        acc += -mix.ln();
    }
    acc / n as f64 / std::f64::consts::LN_2
}

#[test]
fn ground_truth_mi_sanity() {
    let start = Instant::now();
    let mut ok = true;
    let mut worst_indep: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut misses = Vec::new();
    for technique in [Technique::Perturbation, Technique::Proximity] {
        for s in 0..10u64 {
            let (d1, g1) = generate_system(&SynthConfig::balanced(technique, 2, 2, 1.0, s)).unwrap();
            let gi1 = ground_truth_mi(&d1, &g1).unwrap();
            worst_indep = worst_indep.max(gi1.abs());
            ok &= gi1.abs() <= 0.02;

            let (d0, g0) = generate_system(&SynthConfig::balanced(technique, 2, 2, 0.0, s)).unwrap();
            let gi0 = ground_truth_mi(&d0, &g0).unwrap();
            let mc = monte_carlo_mi(&g0.means, &g0.covariance, &g0.prior, derive_seed(99, s));
            let gap = (gi0 - mc).abs();
            worst_gap = worst_gap.max(gap);
            if gap > 0.01 {
                ok = false;
                // same model, 250x the rows: separates sampling error from a wrong formula
                let big = SynthConfig {
                    samples_per_class_base: 250_000,
                    ..SynthConfig::balanced(technique, 2, 2, 0.0, s)
                };
                let (db, gb) = generate_system(&big).unwrap();
                let gi_big = ground_truth_mi(&db, &gb).unwrap();
                misses.push(format!("{technique:?}/{s}: GI {gi0:.4} vs MC {mc:.4} (GI at N=500000: {gi_big:.4})"));
            }
        }
    }
    let details = format!(
        "max |GI| at eps=1 {worst_indep:.4}; max |GI - MC| at eps=0 {worst_gap:.4}; {} of 20 outside 0.01 {misses:?}",
        misses.len()
    );
    verdict(2, "ground-truth MI sanity", ok, start.elapsed(), Duration::from_secs(60), &details);
}

// ---------------------------------------------------------------------------
// 3: estimator accuracy over a reduced synthetic grid

#[test]
fn estimator_generalization_grid() {
    let start = Instant::now();
    let grid = SweepGrid {
        techniques: vec![Technique::Perturbation],
        classes: vec![2, 4],
        dims: vec![2, 5, 10],
        imbalances: vec![0.1, 0.5],
        epsilons: vec![0.0, 0.5, 1.0],
        seeds: 10,
        methods: vec![MiMethod::MidPoint, MiMethod::CalLogLoss, MiMethod::Gmm],
        ..SweepGrid::default()
    };
    let out = run_sweep(&grid, 3).unwrap();
    let expected = grid.cells().len() * grid.seeds * grid.methods.len();
    let cal = mean_nmae(&out.rows, |r| r.method == MiMethod::CalLogLoss).unwrap_or(f64::NAN);
    let hard = |r: &leakdetect::sweep::SweepRow| r.r < 1.0 / r.num_classes as f64 - 1e-12 && r.epsilon >= 0.5;
    let mid_hard = mean_nmae(&out.rows, |r| r.method == MiMethod::MidPoint && hard(r)).unwrap_or(f64::NAN);
    let cal_hard = mean_nmae(&out.rows, |r| r.method == MiMethod::CalLogLoss && hard(r)).unwrap_or(f64::NAN);
    let gmm = mean_nmae(&out.rows, |r| r.method == MiMethod::Gmm && r.d <= 5).unwrap_or(f64::NAN);
    let ok = out.failures.is_empty() && out.rows.len() == expected && cal <= 0.15 && mid_hard > cal_hard && gmm <= 0.10;
    let details = format!(
        "rows {}/{expected}, failures {}; cal-log-loss NMAE {cal:.4}; imbalanced eps>=0.5: mid-point {mid_hard:.4} vs cal-log-loss {cal_hard:.4}; GMM (d<=5) {gmm:.4}",
        out.rows.len(),
        out.failures.len()
    );
    verdict(3, "estimator generalization grid", ok, start.elapsed(), Duration::from_secs(1800), &details);
}

// ---------------------------------------------------------------------------
// 4: exact tests against independent definitions

/// Two-sided Fisher p-value by enumerating every table with the same margins.
fn fisher_oracle(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let fact = |n: u64| (1..=n).fold(BigUint::from(1u32), |acc, i| acc * BigUint::from(i));
    let (r1, r2, c1, c2) = (a + b, c + d, a + c, b + d);
    let n = r1 + r2;
    let num = fact(r1) * fact(r2) * fact(c1) * fact(c2);
    let prob = |x: u64| {
        let den = fact(n) * fact(x) * fact(r1 - x) * fact(c1 - x) * fact(r2 + x - c1);
        BigRational::new(num.clone().into(), den.into())
    };
    let obs = prob(a);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let mut tail = BigRational::zero();
    for x in lo..=hi {
        let p = prob(x);
        if p <= obs {
            tail += p;
        }
    }
    tail.to_f64().unwrap()
}

fn holm_oracle(ps: &[f64], alpha: f64) -> Vec<bool> {
    let j = ps.len();
    let mut idx: Vec<usize> = (0..j).collect();
    idx.sort_by(|&x, &y| ps[x].partial_cmp(&ps[y]).unwrap().then(x.cmp(&y)));
    let mut rejected = vec![false; j];
    for (rank, &i) in idx.iter().enumerate() {
        if ps[i] < alpha / (j - rank) as f64 {
            rejected[i] = true;
        } else {
            break;
        }
    }
    rejected
}

#[test]
fn exact_test_oracles() {
    let start = Instant::now();
    let mut tables = 0usize;
    let mut fisher_mismatch = Vec::new();
    for n in 1..=30u64 {
        for a in 0..=n {
            for b in 0..=n - a {
                for c in 0..=n - a - b {
                    let d = n - a - b - c;
                    tables += 1;
                    let got = fisher_exact(&ConfusionMatrix::binary(a, b, c, d)).unwrap().p_value;
                    let want = fisher_oracle(a, b, c, d);
                    if got != want {
                        fisher_mismatch.push((a, b, c, d, got, want));
                    }
                }
            }
        }
    }
    let mut rng = seeded(4);
    let mut holm_mismatch = 0usize;
    for _ in 0..10_000 {
        let j = rng.random_range(1..=20);
        let alpha = [0.01, 0.05, 0.1][rng.random_range(0..3)];
        // coarse grid values force ties and values on the thresholds
        let ps: Vec<f64> = (0..j)
            .map(|_| if rng.random::<bool>() { rng.random::<f64>() * 0.02 } else { rng.random_range(0..=100) as f64 / 2000.0 })
            .collect();
        let out = holm_bonferroni(&ps, alpha).unwrap();
        let want = holm_oracle(&ps, alpha);
        if out.rejected != want || out.tau != want.iter().filter(|r| **r).count() {
            holm_mismatch += 1;
        }
    }
    let ok = fisher_mismatch.is_empty() && holm_mismatch == 0;
    let details = format!(
        "{tables} tables, {} Fisher mismatches {:?}; 10000 Holm vectors, {holm_mismatch} mismatches",
        fisher_mismatch.len(),
        fisher_mismatch.iter().take(3).collect::<Vec<_>>()
    );
    verdict(4, "exact test oracles", ok, start.elapsed(), Duration::from_secs(60), &details);
}

// ---------------------------------------------------------------------------
// 5: conditional-entropy bounds

fn binary_h(p: f64) -> f64 {
    let t = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    t(p) + t(1.0 - p)
}

/// `H(Y|X)` for `Y ~ (pi0, 1 - pi0)`, `X | Y = k ~ N(k * delta, 1)` by
/// composite Simpson integration.
fn gaussian_cond_entropy(pi0: f64, delta: f64) -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |x: f64| {
        let p0 = pi0 * phi(x);
        let p1 = (1.0 - pi0) * phi(x - delta);
        let px = p0 + p1;
        if px == 0.0 {
            0.0
        } else {
            px * binary_h(p1 / px)
        }
    };
    let (lo, hi) = (-14.0, delta + 14.0);
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn gaussian_bayes_error(pi0: f64, delta: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    let t = delta / 2.0 + (pi0 / (1.0 - pi0)).ln() / delta;
    pi0 * (1.0 - n.cdf(t)) + (1.0 - pi0) * n.cdf(t - delta)
}

#[test]
fn entropy_bounds_suite() {
    let start = Instant::now();
    let mut rng = seeded(5);
    let mut fuzz_bad = 0usize;
    for _ in 0..10_000 {
        let m = rng.random_range(2..=12usize);
        let err = rng.random::<f64>() * (m - 1) as f64 / m as f64;
        let b = cond_entropy_bounds(err, m).unwrap();
        if !(0.0 <= b.lower && b.lower <= b.upper && b.upper <= (m as f64).log2() + 1e-12) {
            fuzz_bad += 1;
        }
    }
    let mut grid_bad = Vec::new();
    for pi0 in [0.5, 0.6, 0.75, 0.9, 0.97] {
        for k in 0..10 {
            let delta = 0.2 + 0.5 * k as f64;
            let err = gaussian_bayes_error(pi0, delta);
            let h = gaussian_cond_entropy(pi0, delta);
            let b = cond_entropy_bounds(err, 2).unwrap();
            if h < b.lower - 1e-6 || h > b.upper + 1e-6 {
                grid_bad.push((pi0, delta, b.lower, h, b.upper));
            }
        }
    }
    let ok = fuzz_bad == 0 && grid_bad.is_empty();
    let details = format!("{fuzz_bad} fuzz violations; {} of 50 Gaussian grid points outside {grid_bad:?}", grid_bad.len());
    verdict(5, "conditional-entropy bounds", ok, start.elapsed(), Duration::from_secs(60), &details);
}

// ---------------------------------------------------------------------------
// 6: end-to-end detection over ten systems

#[test]
fn end_to_end_detection() {
    let start = Instant::now();
    let mut systems = Vec::new();
    for i in 0..10u64 {
        let leak = i < 5;
        let r = if i % 2 == 0 { 0.1 } else { 0.5 };
        let cfg = SynthConfig::balanced(Technique::Perturbation, 2, 5, if leak { 0.0 } else { 1.0 }, 100 + i).with_imbalance(r);
        systems.push((generate_system(&cfg).unwrap().0, leak));
    }
    let ild = IldDataset::new(systems).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for approach in [Approach::CalLogLoss, Approach::FetMedian] {
        let cfg = IldConfig::new(approach);
        let e = evaluate_ild(&ild, &cfg, 17).unwrap();
        ok &= e.failures.is_empty() && e.accuracy >= 0.9 && e.fpr <= 0.1 && cfg.threshold == 5;
        notes.push(format!(
            "{approach}: accuracy {:.2}, fpr {:.2}, fnr {:.2}, failures {}",
            e.accuracy,
            e.fpr,
            e.fnr,
            e.failures.len()
        ));
    }
    verdict(6, "end-to-end detection", ok, start.elapsed(), Duration::from_secs(1200), &notes.join("; "));
}

// ---------------------------------------------------------------------------
// 7: numerical checks

fn t_pdf(x: f64, nu: f64) -> f64 {
    (ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln() - (nu + 1.0) / 2.0 * (1.0 + x * x / nu).ln()).exp()
}

/// `0.5 + integral_0^t pdf` by composite Simpson.
fn t_cdf_quadrature(t: f64, nu: f64) -> f64 {
    let n = 20_000;
    let h = t / n as f64;
    let mut s = t_pdf(0.0, nu) + t_pdf(t, nu);
    for i in 1..n {
        s += t_pdf(i as f64 * h, nu) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + s * h / 3.0
}

#[test]
fn numerical_checks() {
    let start = Instant::now();
    let mut notes = Vec::new();

    // network gradient against central differences
    let mut rng = seeded(7);
    let mut worst_grad: f64 = 0.0;
    for trial in 0..5 {
        let (d, m, n) = (4, 3, 16);
        let mut mlp = Mlp::new(vec![d, 6, 5, m], &mut rng).unwrap();
        for p in mlp.params_mut() {
            *p += 0.1 * rng.random::<f64>() - 0.05;
        }
        let x: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<usize> = (0..n).map(|i| (i + trial) % m).collect();
        let prior = [0.3, 0.3, 0.4];
        let (_, grad) = loss_and_grad(&mlp, Head::Softmax, &prior, 1e-3, &x, &y);
        let h = 1e-6;
        let mut num = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let orig = mlp.params()[i];
            mlp.params_mut()[i] = orig + h;
            let up = loss_and_grad(&mlp, Head::Softmax, &prior, 1e-3, &x, &y).0;
            mlp.params_mut()[i] = orig - h;
            let down = loss_and_grad(&mlp, Head::Softmax, &prior, 1e-3, &x, &y).0;
            mlp.params_mut()[i] = orig;
            num[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst_grad = worst_grad.max(diff / scale);
    }
    let grad_ok = worst_grad <= 1e-4;
    notes.push(format!("gradient rel. error {worst_grad:.2e}"));

    // EM log-likelihood never decreases
    let mut em_ok = true;
    for (s, cov) in [CovarianceType::Full, CovarianceType::Diag, CovarianceType::Tied, CovarianceType::Spherical].into_iter().enumerate() {
        let (data, _) = generate_system(&SynthConfig::balanced(Technique::Perturbation, 3, 3, 0.2, s as u64)).unwrap();
        let g = fit_gmm(data.rows(), 3, cov, &EmOptions::default(), 3).unwrap();
        em_ok &= g.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs());
    }
    notes.push(format!("EM monotone {em_ok}"));

    // Student-t CDF against quadrature of the density
    let mut worst_t: f64 = 0.0;
    for nu in [1.0, 2.0, 3.0, 4.5, 7.0, 9.0, 15.0, 30.0, 100.0] {
        for k in -32..=32 {
            let t = k as f64 * 0.25;
            worst_t = worst_t.max((student_t_cdf(t, nu) - t_cdf_quadrature(t, nu)).abs());
        }
    }
    let t_ok = worst_t <= 1e-8;
    notes.push(format!("t CDF max error {worst_t:.2e}"));

    // calibrated rows stay on the simplex
    let mut worst_row: f64 = 0.0;
    let mut cal_ok = true;
    for trial in 0..200u64 {
        let m = 2 + (trial % 4) as usize;
        let n = 30 + (trial % 50) as usize;
        let method = CalibrationMethod::ALL[(trial % CalibrationMethod::ALL.len() as u64) as usize];
        let mut w = Vec::with_capacity(n * m);
        for _ in 0..n * m {
            let u: f64 = rng.random();
            w.push(if rng.random::<f64>() < 0.1 { 0.0 } else { u.powi(3) });
        }
        for row in w.chunks_mut(m) {
            if row.iter().all(|v| *v == 0.0) {
                row[0] = 1.0;
            }
        }
        let probs = ProbMatrix::from_weights(w, m);
        let labels: Vec<usize> = (0..n).map(|i| if i < m { i } else { rng.random_range(0..m) }).collect();
        let opts = CalibrationOptions::default();
        match fit_calibrator(method, &probs, &labels, &opts).and_then(|c| apply_calibrator(&c, &probs)) {
            Ok(out) => {
                for r in out.rows() {
                    let s: f64 = r.iter().sum();
                    worst_row = worst_row.max((s - 1.0).abs());
                    cal_ok &= r.iter().all(|v| (0.0..=1.0).contains(v));
                }
            }
            Err(e) => {
                cal_ok = false;
                notes.push(format!("{method:?}: {e}"));
            }
        }
    }
    cal_ok &= worst_row <= 1e-9;
    notes.push(format!("calibrated row-sum error {worst_row:.2e}"));

    let ok = grad_ok && em_ok && t_ok && cal_ok;
    verdict(7, "numerical checks", ok, start.elapsed(), Duration::from_secs(600), &notes.join(", "));
}
