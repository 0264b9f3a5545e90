//! Argument parsing and dispatch for the `leakdetect` binary.
//!
//! Exit codes: 0 success (or no leak), 1 error, 2 leak detected.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use leakdetect::calibrate::CalibrationMethod;
use leakdetect::data::{class_marginal, entropy_bits, read_csv, read_csv_with_meta, write_csv, Dataset, DatasetMeta, LabelColumn, SplitPlan};
use leakdetect::detect::{evaluate_ild, run_ild, Approach, IldDataset};
use leakdetect::miest::{estimate, MiEstimate, MiMethod};
use leakdetect::rng::derive_seed;
use leakdetect::sweep::{run_sweep, write_rows_csv};
use leakdetect::synth::{generate_system, ground_truth_mi, GenMethod, SynthConfig, Technique};
use serde::de::DeserializeOwned;
use serde::Serialize;

use config::{output_dir, FileConfig, SCHEMA_VERSION};
use output::{write_atomic, write_json};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_LEAK: i32 = 2;

/// Parse a value by its kebab-case serde name.
fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "leakdetect", version, about = "Mutual-information estimation and information-leakage detection")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON configuration file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a system and write it as CSV plus a JSON sidecar.
    SynthGen(SynthArgs),
    /// Estimate I(X;Y) in bits on a CSV dataset.
    MiEstimate(EstimateArgs),
    /// Decide whether a dataset (or each of a set of datasets) leaks.
    Detect(DetectArgs),
    /// Run a synthetic estimation sweep and write a CSV table.
    Benchmark(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// proximity or perturbation.
    #[arg(long, value_parser = kebab::<Technique>)]
    pub technique: Technique,
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub dims: usize,
    /// Noise level epsilon in [0, 1].
    #[arg(long)]
    pub noise: f64,
    /// Imbalance ratio r in (0, 1/M]; default 1/M.
    #[arg(long)]
    pub imbalance: Option<f64>,
    /// balanced, minority or majority (default: balanced when r = 1/M,
    /// minority otherwise).
    #[arg(long, value_parser = kebab::<GenMethod>)]
    pub gen_method: Option<GenMethod>,
    #[arg(long, default_value_t = 1000)]
    pub samples_per_class: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
    /// File stem for the CSV and sidecar.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// mid-point, log-loss, cal-log-loss, gmm, mine or pc-softmax.
    #[arg(long, value_parser = kebab::<MiMethod>)]
    pub method: MiMethod,
    #[arg(long)]
    pub input: PathBuf,
    /// Label column name or zero-based index.
    #[arg(long, default_value = "y")]
    pub label_col: LabelColumn,
    #[arg(long, value_parser = kebab::<CalibrationMethod>)]
    pub calibration: Option<CalibrationMethod>,
    /// Share of rows held out for the estimate.
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    /// Configurations tried by the search.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON file (default: stdout).
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// mid-point, log-loss, cal-log-loss, gmm, mine, pc-softmax,
    /// ptt-majority, fet-mean or fet-median (default cal-log-loss).
    #[arg(long, value_parser = kebab::<Approach>)]
    pub approach: Option<Approach>,
    /// A CSV file, or a directory of CSV files together with `--labels`.
    #[arg(long)]
    pub input: PathBuf,
    /// CSV with columns `file,leaks` (0/1) naming the systems in `--input`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Label column name or zero-based index.
    #[arg(long, default_value = "y")]
    pub label_col: LabelColumn,
    /// isotonic, platt, beta, temperature or histogram.
    #[arg(long, value_parser = kebab::<CalibrationMethod>)]
    pub calibration: Option<CalibrationMethod>,
    /// Family-wise significance level (default 0.01).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of top candidates tested.
    #[arg(long)]
    pub top_j: Option<usize>,
    /// Rejections needed to declare a leak (default 5).
    #[arg(long)]
    pub threshold: Option<usize>,
    /// Stratified folds per candidate (default 10).
    #[arg(long)]
    pub folds: Option<usize>,
    /// Configurations tried by the search (default 12).
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON file (default: stdout, after the summary on stderr).
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', value_parser = kebab::<Technique>)]
    pub techniques: Option<Vec<Technique>>,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub imbalances: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = kebab::<MiMethod>)]
    pub methods: Option<Vec<MiMethod>>,
    /// Datasets per grid cell.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV file (default: `benchmark.csv` in the output directory).
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

/// Parse `argv`, run the command and return the process exit code. Messages
/// go to stderr; reports go to files or stdout.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig {
            schema_version: SCHEMA_VERSION,
            ..FileConfig::default()
        },
    };
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::SynthGen(a) => synth_gen(a, &file),
        Command::MiEstimate(a) => mi_estimate(a, &file),
        Command::Detect(a) => detect(a, &file),
        Command::Benchmark(a) => benchmark(a, &file),
    }
}

fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct SynthSidecar<'a> {
    schema_version: u32,
    config: &'a SynthConfig,
    ground_truth_mi_bits: f64,
    label_entropy_bits: f64,
    ground_truth: &'a leakdetect::synth::GroundTruthModel,
}

fn synth_gen(a: SynthArgs, file: &FileConfig) -> Result<i32> {
    let m = a.classes;
    let r = a.imbalance.unwrap_or(1.0 / m.max(1) as f64);
    let mut cfg = SynthConfig {
        samples_per_class_base: a.samples_per_class,
        ..SynthConfig::balanced(a.technique, m, a.dims, a.noise, a.seed.or(file.seed).unwrap_or(0))
    }
    .with_imbalance(r);
    if let Some(g) = a.gen_method {
        cfg.gen_method = g;
    }
    let (data, gt) = generate_system(&cfg)?;
    let gi = ground_truth_mi(&data, &gt)?;
    let dir = output_dir(a.output.as_deref(), file);
    let stem = a.name.unwrap_or_else(|| {
        let t = match cfg.technique {
            Technique::Perturbation => "perturbation",
            Technique::Proximity => "proximity",
        };
        format!("{t}_m{}_d{}_eps{}_r{}_seed{}", cfg.num_classes, cfg.dims, cfg.epsilon, cfg.imbalance, cfg.seed)
    });
    let csv_path = dir.join(format!("{stem}.csv"));
    write_atomic(&csv_path, |w| Ok(write_csv(&data, w)?))?;

    let side = SynthSidecar {
        schema_version: SCHEMA_VERSION,
        config: &cfg,
        ground_truth_mi_bits: gi,
        label_entropy_bits: entropy_bits(&gt.prior)?,
        ground_truth: &gt,
    };
    let mut extra = match serde_json::to_value(&side)? {
        serde_json::Value::Object(map) => map,
        _ => unreachable!("struct serializes to an object"),
    };
    extra.remove("schema_version");
    let mut meta = DatasetMeta {
        name: Some(stem.clone()),
        label_column: Some("y".into()),
        class_names: None,
        extra,
    };
    meta.extra.insert("schema_version".into(), SCHEMA_VERSION.into());
    write_json(&csv_path.with_extension("json"), &meta)?;
    eprintln!("wrote {} ({} rows, ground-truth MI {gi:.4} bits)", csv_path.display(), data.len());
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    schema_version: u32,
    input: String,
    method: MiMethod,
    value_bits: f64,
    /// Value limited to `[0, lg M]`.
    clamped_bits: f64,
    label_entropy_bits: f64,
    rows: usize,
    test_rows: usize,
    seed: u64,
    estimate: MiEstimate,
}

fn mi_estimate(a: EstimateArgs, file: &FileConfig) -> Result<i32> {
    let (data, _) = read_csv_with_meta(&a.input, &a.label_col).with_context(|| format!("reading {}", a.input.display()))?;
    let mut cfg = file.estimator();
    if let Some(c) = a.calibration {
        cfg.calibration = c;
    }
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let split = SplitPlan::mccv(1, a.test_fraction, derive_seed(seed, 0)).splits(&data)?.remove(0);
    let (train, test) = (data.subset(&split.train), data.subset(&split.test));
    let est = estimate(a.method, &train, &test, &cfg, derive_seed(seed, 1))?;
    let report = EstimateReport {
        schema_version: SCHEMA_VERSION,
        input: a.input.display().to_string(),
        method: a.method,
        value_bits: est.value,
        clamped_bits: est.clamped(data.num_classes()),
        label_entropy_bits: entropy_bits(&class_marginal(&data)?)?,
        rows: data.len(),
        test_rows: test.len(),
        seed,
        estimate: est,
    };
    emit(&report, a.output.as_deref())?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct DetectOutput<'a> {
    schema_version: u32,
    input: String,
    report: &'a leakdetect::detect::DetectionReport,
}

#[derive(Serialize)]
struct SystemEntry {
    file: String,
    leaks: bool,
}

#[derive(Serialize)]
struct EvaluateOutput<'a> {
    schema_version: u32,
    input: String,
    approach: Approach,
    systems: Vec<SystemEntry>,
    evaluation: &'a leakdetect::detect::IldEvaluation,
}

/// `file,leaks` rows; `leaks` accepts 0/1 or true/false.
fn read_labels(path: &Path) -> Result<Vec<(String, bool)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 {
            bail!("{}: expected two columns (file, leaks)", path.display());
        }
        let z = match &rec[1] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => bail!("{}: leak flag {other:?} is not 0/1", path.display()),
        };
        out.push((rec[0].to_string(), z));
    }
    if out.is_empty() {
        bail!("{}: no systems listed", path.display());
    }
    Ok(out)
}

fn detect(a: DetectArgs, file: &FileConfig) -> Result<i32> {
    let mut cfg = file.detect();
    if let Some(x) = a.approach {
        cfg.approach = x;
    }
    if let Some(x) = a.calibration {
        cfg.estimator.calibration = x;
    }
    if let Some(x) = a.alpha {
        cfg.alpha = x;
    }
    if let Some(x) = a.top_j {
        cfg.top_j = x;
        if a.threshold.is_none() {
            cfg.threshold = (x / 2).max(1);
        }
        if a.budget.is_none() {
            cfg.estimator.budget = cfg.estimator.budget.max(x);
        }
    }
    if let Some(x) = a.threshold {
        cfg.threshold = x;
    }
    if let Some(x) = a.folds {
        cfg.outer_folds = x;
    }
    if let Some(x) = a.budget {
        cfg.estimator.budget = x;
    }
    cfg.validate()?;
    let seed = a.seed.or(file.seed).unwrap_or(0);

    if a.input.is_dir() {
        let labels = a.labels.as_ref().context("--labels is required when --input is a directory")?;
        let listed = read_labels(labels)?;
        let mut systems = Vec::with_capacity(listed.len());
        for (name, z) in &listed {
            let p = a.input.join(name);
            let d: Dataset = read_csv(&p, &a.label_col).with_context(|| format!("reading {}", p.display()))?;
            systems.push((d, *z));
        }
        let ild = IldDataset::new(systems)?;
        let e = evaluate_ild(&ild, &cfg, seed)?;
        let names: Vec<String> = listed.iter().map(|(n, _)| n.clone()).collect();
        let truth: Vec<bool> = listed.iter().map(|(_, z)| *z).collect();
        eprint!("{}", output::evaluation_table(&names, &truth, &e));
        for (i, msg) in &e.failures {
            eprintln!("system {} failed: {msg}", names[*i]);
        }
        let out = EvaluateOutput {
            schema_version: SCHEMA_VERSION,
            input: a.input.display().to_string(),
            approach: cfg.approach,
            systems: listed.into_iter().map(|(file, leaks)| SystemEntry { file, leaks }).collect(),
            evaluation: &e,
        };
        emit(&out, a.output.as_deref())?;
        return Ok(EXIT_OK);
    }

    let (data, _) = read_csv_with_meta(&a.input, &a.label_col).with_context(|| format!("reading {}", a.input.display()))?;
    let report = run_ild(&data, &cfg, seed)?;
    eprint!("{}", output::detection_table(&report));
    for f in &report.failures {
        eprintln!("candidate failed: {f}");
    }
    let out = DetectOutput {
        schema_version: SCHEMA_VERSION,
        input: a.input.display().to_string(),
        report: &report,
    };
    emit(&out, a.output.as_deref())?;
    Ok(if report.decision.is_leak() { EXIT_LEAK } else { EXIT_OK })
}

fn benchmark(a: BenchArgs, file: &FileConfig) -> Result<i32> {
    let mut grid = file.benchmark();
    if let Some(x) = a.techniques {
        grid.techniques = x;
    }
    if let Some(x) = a.classes {
        grid.classes = x;
    }
    if let Some(x) = a.dims {
        grid.dims = x;
    }
    if let Some(x) = a.imbalances {
        grid.imbalances = x;
    }
    if let Some(x) = a.epsilons {
        grid.epsilons = x;
    }
    if let Some(x) = a.methods {
        grid.methods = x;
    }
    if let Some(x) = a.seeds {
        grid.seeds = x;
    }
    if let Some(x) = a.samples_per_class {
        grid.samples_per_class_base = x;
    }
    if let Some(x) = a.budget {
        grid.estimator.budget = x;
    }
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let out = run_sweep(&grid, seed)?;
    for f in &out.failures {
        eprintln!(
            "cell {:?} M={} d={} r={} eps={} seed {} method {}: {}",
            f.cell.technique,
            f.cell.num_classes,
            f.cell.dims,
            f.cell.imbalance,
            f.cell.epsilon,
            f.seed,
            f.method.map(|m| m.name()).unwrap_or("-"),
            f.message
        );
    }
    let path = a.output.unwrap_or_else(|| output_dir(None, file).join("benchmark.csv"));
    write_atomic(&path, |w| Ok(write_rows_csv(&out.rows, w)?))?;
    eprint!("{}", output::benchmark_table(&out.rows));
    eprintln!("wrote {} rows to {} ({} failures)", out.rows.len(), path.display(), out.failures.len());
    Ok(EXIT_OK)
}
