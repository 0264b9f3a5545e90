//! Synthetic benchmark sweeps: generate systems over a parameter grid,
//! estimate MI with several methods and score each estimate by NMAE.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{entropy_bits, Dataset, SplitPlan};
use crate::detect::nmae;
use crate::error::{invalid, Result};
use crate::miest::{estimate_with, select_setups, EstimatorConfig, MiMethod, Setup};
use crate::models::Ranked;
use crate::rng::derive_seed;
use crate::synth::{generate_system, ground_truth_mi, SynthConfig, Technique};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub techniques: Vec<Technique>,
    pub classes: Vec<usize>,
    pub dims: Vec<usize>,
    /// Imbalance ratios; values at or above `1/M` mean a balanced system.
    pub imbalances: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Datasets per grid cell.
    pub seeds: usize,
    pub methods: Vec<MiMethod>,
    pub samples_per_class_base: usize,
    /// Share of each dataset held out for estimation.
    pub test_fraction: f64,
    pub estimator: EstimatorConfig,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            techniques: vec![Technique::Perturbation],
            classes: vec![2, 4],
            dims: vec![2, 5, 10],
            imbalances: vec![0.1, 0.5],
            epsilons: vec![0.0, 0.5, 1.0],
            seeds: 10,
            methods: vec![MiMethod::MidPoint, MiMethod::CalLogLoss, MiMethod::Gmm],
            samples_per_class_base: 1000,
            test_fraction: 0.3,
            estimator: EstimatorConfig::default(),
        }
    }
}

/// One grid cell before seeding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub technique: Technique,
    pub num_classes: usize,
    pub dims: usize,
    pub imbalance: f64,
    pub epsilon: f64,
}

impl SweepCell {
    /// Balanced when the requested ratio is not below `1/M`.
    pub fn effective_imbalance(&self) -> f64 {
        self.imbalance.min(1.0 / self.num_classes as f64)
    }

    pub fn is_balanced(&self) -> bool {
        self.imbalance >= 1.0 / self.num_classes as f64 - 1e-12
    }

    pub fn synth_config(&self, base: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            samples_per_class_base: base,
            ..SynthConfig::balanced(self.technique, self.num_classes, self.dims, self.epsilon, seed)
        }
        .with_imbalance(self.effective_imbalance())
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str, len: usize| if len == 0 { Err(invalid(format!("sweep grid has no {name}"))) } else { Ok(()) };
        empty("techniques", self.techniques.len())?;
        empty("classes", self.classes.len())?;
        empty("dims", self.dims.len())?;
        empty("imbalances", self.imbalances.len())?;
        empty("epsilons", self.epsilons.len())?;
        empty("methods", self.methods.len())?;
        empty("seeds", self.seeds)?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(invalid(format!("test_fraction {} not in (0, 1)", self.test_fraction)));
        }
        for cell in self.cells() {
            cell.synth_config(self.samples_per_class_base, 0).validate()?;
        }
        Ok(())
    }

    /// Cells in technique, M, d, r, epsilon order.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &technique in &self.techniques {
            for &num_classes in &self.classes {
                for &dims in &self.dims {
                    for &imbalance in &self.imbalances {
                        for &epsilon in &self.epsilons {
                            out.push(SweepCell {
                                technique,
                                num_classes,
                                dims,
                                imbalance,
                                epsilon,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub technique: Technique,
    pub method: MiMethod,
    #[serde(rename = "M")]
    pub num_classes: usize,
    pub d: usize,
    /// Effective imbalance ratio (`1/M` for balanced systems).
    pub r: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub truth_bits: f64,
    pub estimate_bits: f64,
    pub nmae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub cell: SweepCell,
    pub method: Option<MiMethod>,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

fn uses_portfolio(m: MiMethod) -> bool {
    matches!(m, MiMethod::MidPoint | MiMethod::LogLoss | MiMethod::CalLogLoss)
}

/// Generate one dataset, split it, and estimate with every method. Methods
/// built on the classifier portfolio share one search.
fn run_one(grid: &SweepGrid, cell: &SweepCell, seed: u64) -> (Vec<SweepRow>, Vec<SweepFailure>) {
    let fail = |method, message: String| SweepFailure {
        cell: *cell,
        method,
        seed,
        message,
    };
    let prepared = (|| -> Result<(Dataset, Dataset, f64, f64)> {
        let (data, gt) = generate_system(&cell.synth_config(grid.samples_per_class_base, seed))?;
        let split = SplitPlan::mccv(1, grid.test_fraction, derive_seed(seed, 0)).splits(&data)?.remove(0);
        let test = data.subset(&split.test);
        let truth = ground_truth_mi(&test, &gt)?;
        let h_y = entropy_bits(&gt.prior)?;
        Ok((data.subset(&split.train), test, truth, h_y))
    })();
    let (train, test, truth, h_y) = match prepared {
        Ok(p) => p,
        Err(e) => return (Vec::new(), vec![fail(None, e.to_string())]),
    };

    let est_seed = derive_seed(seed, 1);
    let mut shared: Option<Result<Ranked<Setup>>> = None;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &method in &grid.methods {
        let best = if uses_portfolio(method) {
            let s = shared.get_or_insert_with(|| select_setups(MiMethod::MidPoint, &train, &grid.estimator, est_seed).map(|mut v| v.remove(0)));
            s.as_ref().map(Clone::clone).map_err(|e| invalid(e.to_string()))
        } else {
            select_setups(method, &train, &grid.estimator, est_seed).map(|mut v| v.remove(0))
        };
        let value = best.and_then(|b| estimate_with(method, &b.config, &train, &test, &grid.estimator, b.seed));
        match value.and_then(|e| {
            let v = e.clamped(cell.num_classes);
            Ok((v, nmae(&[v], &[truth], h_y)?))
        }) {
            Ok((estimate_bits, err)) => rows.push(SweepRow {
                technique: cell.technique,
                method,
                num_classes: cell.num_classes,
                d: cell.dims,
                r: cell.effective_imbalance(),
                epsilon: cell.epsilon,
                seed,
                truth_bits: truth,
                estimate_bits,
                nmae: err,
            }),
            Err(e) => failures.push(fail(Some(method), e.to_string())),
        }
    }
    (rows, failures)
}

/// Run every cell and seed. Failures are collected and the sweep goes on.
/// Dataset seeds are `derive_seed(derive_seed(seed, cell), s)`.
pub fn run_sweep(grid: &SweepGrid, seed: u64) -> Result<SweepOutcome> {
    grid.validate()?;
    let jobs: Vec<(SweepCell, u64)> = grid
        .cells()
        .into_iter()
        .enumerate()
        .flat_map(|(c, cell)| (0..grid.seeds).map(move |s| (cell, derive_seed(derive_seed(seed, c as u64), s as u64))))
        .collect();
    let results: Vec<_> = jobs.par_iter().map(|(cell, s)| run_one(grid, cell, *s)).collect();
    let mut out = SweepOutcome::default();
    for (rows, failures) in results {
        out.rows.extend(rows);
        out.failures.extend(failures);
    }
    Ok(out)
}

pub fn write_rows_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["technique", "method", "M", "d", "r", "epsilon", "seed", "truth_bits", "estimate_bits", "nmae"])?;
    for r in rows {
        let technique = match r.technique {
            Technique::Perturbation => "perturbation",
            Technique::Proximity => "proximity",
        };
        w.write_record([
            technique.to_string(),
            r.method.name().to_string(),
            r.num_classes.to_string(),
            r.d.to_string(),
            r.r.to_string(),
            r.epsilon.to_string(),
            r.seed.to_string(),
            r.truth_bits.to_string(),
            r.estimate_bits.to_string(),
            r.nmae.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean NMAE of the rows matching `keep`, or `None` if none match.
pub fn mean_nmae<F: Fn(&SweepRow) -> bool>(rows: &[SweepRow], keep: F) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| keep(r)).map(|r| r.nmae).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
