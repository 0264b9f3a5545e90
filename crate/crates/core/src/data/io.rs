use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Result};

/// Which CSV column holds the labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl Default for LabelColumn {
    fn default() -> Self {
        LabelColumn::Name("y".into())
    }
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// Plain integers are column indices, anything else is a header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Optional JSON sidecar stored next to a CSV (`data.csv` -> `data.json`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    /// Original label spelling of each contiguous class index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    /// Anything else the producer wanted to record.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Read a CSV with a header row. The label column may hold any strings; they
/// are mapped to `0..M` in numeric order when all parse as numbers and in
/// lexicographic order otherwise. All other columns must be numeric.
pub fn read_csv(path: &Path, label: &LabelColumn) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv_from(file, label)
}

pub fn read_csv_from<R: Read>(reader: R, label: &LabelColumn) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_idx = match label {
        LabelColumn::Index(i) if *i < headers.len() => *i,
        LabelColumn::Index(i) => return Err(invalid(format!("label column {i} out of range"))),
        LabelColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("no column named {name:?}")))?,
    };
    let n_features = headers.len() - 1;

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (col, field) in rec.iter().enumerate() {
            if col == label_idx {
                raw_labels.push(field.to_string());
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    invalid(format!("row {}, column {:?}: {field:?} is not numeric", line + 1, &headers[col]))
                })?;
                features.push(v);
            }
        }
    }

    let distinct: BTreeSet<&str> = raw_labels.iter().map(String::as_str).collect();
    let mut names: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    let numeric: Option<Vec<f64>> = names.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut paired: Vec<(f64, String)> = values.into_iter().zip(names).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        names = paired.into_iter().map(|(_, s)| s).collect();
    }
    let labels = raw_labels
        .iter()
        .map(|s| names.iter().position(|n| n == s).expect("label seen while collecting"))
        .collect();
    let num_classes = names.len();
    Dataset::new(features, n_features, labels, num_classes)?.with_class_names(names)
}

/// Read a CSV and, when present, its JSON sidecar. Class names recorded in the
/// sidecar take precedence over the ones inferred from the CSV.
pub fn read_csv_with_meta(path: &Path, label: &LabelColumn) -> Result<(Dataset, Option<DatasetMeta>)> {
    let mut dataset = read_csv(path, label)?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok((dataset, None));
    }
    let meta: DatasetMeta = serde_json::from_reader(std::fs::File::open(side)?)?;
    if let Some(names) = &meta.class_names {
        if names.len() == dataset.num_classes() {
            dataset = dataset.with_class_names(names.clone())?;
        }
    }
    Ok((dataset, Some(meta)))
}

/// Write features as `x0..x{d-1}` followed by a label column named `y`
/// holding each row's class name.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..dataset.n_features()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    wtr.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for (row, &y) in dataset.rows().iter().zip(dataset.labels()) {
        record.clear();
        record.extend(row.iter().map(|v| format!("{v:?}")));
        record.push(dataset.class_names()[y].clone());
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}
