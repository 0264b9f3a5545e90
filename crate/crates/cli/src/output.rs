//! Atomic file output and the plain-text summary tables.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use leakdetect::detect::{DetectionReport, IldEvaluation};
use leakdetect::sweep::SweepRow;

/// Write through a temporary file in the target directory, then rename it
/// into place so readers never see a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temporary file in {}", dir.display()))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn detection_table(r: &DetectionReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("{:>4}  {:<16} {:>12} {:>12}  {}\n", "rank", "model", "mean value", "p-value", "rejected"));
    let holm = leakdetect::stats::holm_bonferroni(&r.p_values, r.alpha).ok();
    for (i, c) in r.candidates.iter().enumerate() {
        let mean = c.fold_values.iter().sum::<f64>() / c.fold_values.len().max(1) as f64;
        let model = match &c.setup {
            leakdetect::miest::Setup::Model(hp) => hp.family().to_string(),
            leakdetect::miest::Setup::Mine(_) => "mine-net".to_string(),
        };
        let rejected = holm.as_ref().map(|h| if h.rejected[i] { "yes" } else { "no" }).unwrap_or("?");
        s.push_str(&format!("{:>4}  {:<16} {:>12.6} {:>12.3e}  {}\n", i + 1, model, mean, c.test.p_value, rejected));
    }
    let verdict = if r.decision.is_leak() { "LEAK" } else { "no leak" };
    s.push_str(&format!(
        "approach {}: tau = {} (threshold {}, alpha {}) -> {verdict}{}\n",
        r.approach,
        r.tau,
        r.threshold,
        r.alpha,
        if r.reduced { " [fewer candidates than requested]" } else { "" }
    ));
    s
}

pub fn evaluation_table(names: &[String], truth: &[bool], e: &IldEvaluation) -> String {
    let mut s = String::new();
    s.push_str(&format!("{:<32} {:>6} {:>10}\n", "system", "leaks", "decision"));
    for ((n, z), d) in names.iter().zip(truth).zip(&e.decisions) {
        let d = match d {
            Some(d) if d.is_leak() => "leak",
            Some(_) => "no-leak",
            None => "failed",
        };
        s.push_str(&format!("{:<32} {:>6} {:>10}\n", n, if *z { "yes" } else { "no" }, d));
    }
    s.push_str(&format!("accuracy {:.3}  fpr {:.3}  fnr {:.3}\n", e.accuracy, e.fpr, e.fnr));
    s
}

pub fn benchmark_table(rows: &[SweepRow]) -> String {
    let mut methods = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let mut s = format!("{:<14} {:>6} {:>10}\n", "method", "rows", "mean NMAE");
    for m in methods {
        let v: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.nmae).collect();
        s.push_str(&format!("{:<14} {:>6} {:>10.4}\n", m.name(), v.len(), v.iter().sum::<f64>() / v.len() as f64));
    }
    s
}
