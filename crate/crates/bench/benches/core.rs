use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use leakdetect::calibrate::{apply_calibrator, fit_calibrator, CalibrationMethod, CalibrationOptions};
use leakdetect::data::{ConfusionMatrix, SplitPlan};
use leakdetect::miest::{estimate, EstimatorConfig, MiMethod};
use leakdetect::models::{fit_gmm_bayes, fit_knn, fit_softmax_net, GmmParams, Head, KnnParams, NetParams, ProbClassifier};
use leakdetect::stats::{fisher_exact, holm_bonferroni};
use leakdetect::synth::{generate_system, ground_truth_mi, SynthConfig, Technique};

fn system(eps: f64) -> leakdetect::Dataset {
    generate_system(&SynthConfig::balanced(Technique::Perturbation, 2, 5, eps, 1)).unwrap().0
}

fn synth(c: &mut Criterion) {
    let cfg = SynthConfig::balanced(Technique::Perturbation, 4, 10, 0.5, 3);
    c.bench_function("generate_system M4 d10", |b| b.iter(|| generate_system(black_box(&cfg)).unwrap()));
    let (d, gt) = generate_system(&cfg).unwrap();
    c.bench_function("ground_truth_mi M4 d10", |b| b.iter(|| ground_truth_mi(black_box(&d), &gt).unwrap()));
}

fn models(c: &mut Criterion) {
    let d = system(0.2);
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    g.bench_function("softmax net", |b| b.iter(|| fit_softmax_net(&d, &NetParams::default(), Head::Softmax, 1).unwrap()));
    g.bench_function("gmm bayes", |b| b.iter(|| fit_gmm_bayes(&d, &GmmParams::default(), 1).unwrap()));
    let knn = fit_knn(&d, &KnnParams::default()).unwrap();
    g.bench_function("knn predict", |b| b.iter(|| knn.predict_proba(d.rows())));
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let d = system(0.3);
    let p = fit_knn(&d, &KnnParams::default()).unwrap().predict_proba(d.rows());
    for m in [CalibrationMethod::Isotonic, CalibrationMethod::Platt, CalibrationMethod::Temperature] {
        c.bench_function(&format!("calibrate {}", m.name()), |b| {
            b.iter(|| {
                let cal = fit_calibrator(m, &p, d.labels(), &CalibrationOptions::default()).unwrap();
                apply_calibrator(&cal, &p).unwrap()
            })
        });
    }
}

fn stats(c: &mut Criterion) {
    let small = ConfusionMatrix::binary(120, 80, 75, 125);
    let large = ConfusionMatrix::binary(1200, 800, 750, 1250);
    c.bench_function("fisher exact N=400", |b| b.iter(|| fisher_exact(black_box(&small)).unwrap()));
    c.bench_function("fisher float N=4000", |b| b.iter(|| fisher_exact(black_box(&large)).unwrap()));
    let ps: Vec<f64> = (0..10).map(|i| 0.001 * (i * i) as f64).collect();
    c.bench_function("holm J=10", |b| b.iter(|| holm_bonferroni(black_box(&ps), 0.01).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let d = system(0.0);
    let split = SplitPlan::mccv(1, 0.3, 1).splits(&d).unwrap().remove(0);
    let (train, test) = (d.subset(&split.train), d.subset(&split.test));
    let cfg = EstimatorConfig {
        budget: 4,
        ..EstimatorConfig::default()
    };
    let mut g = c.benchmark_group("estimate");
    g.sample_size(10);
    for m in [MiMethod::CalLogLoss, MiMethod::Gmm] {
        g.bench_function(m.name(), |b| b.iter(|| estimate(m, &train, &test, &cfg, 1).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, synth, models, calibration, stats, pipeline);
criterion_main!(benches);
