//! Report tables and their CSV/JSON serialization.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub keys: Vec<String>,
    /// `None` marks an undefined cell, written as `NA`.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub key_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl Table {
    pub fn new(name: impl Into<String>, key_columns: &[&str], value_columns: Vec<String>) -> Self {
        Self {
            name: name.into(),
            key_columns: key_columns.iter().map(|s| s.to_string()).collect(),
            value_columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, keys: Vec<String>, values: Vec<Option<f64>>) {
        assert_eq!(keys.len(), self.key_columns.len(), "key arity");
        assert_eq!(values.len(), self.value_columns.len(), "value arity");
        self.rows.push(ReportRow { keys, values });
    }

    /// The value at `column` of the first row whose keys equal `keys`.
    pub fn cell(&self, keys: &[&str], column: &str) -> Option<f64> {
        let c = self.value_columns.iter().position(|v| v == column)?;
        self.rows
            .iter()
            .find(|r| r.keys.iter().map(String::as_str).eq(keys.iter().copied()))
            .and_then(|r| r.values[c])
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.key_columns.iter().chain(&self.value_columns))?;
        for row in &self.rows {
            let values = row
                .values
                .iter()
                .map(|v| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}")));
            w.write_record(row.keys.iter().cloned().chain(values))?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Parses CSV written by [`Table::to_csv`]; values keep 4 decimals.
    pub fn from_csv(name: &str, key_count: usize, text: &str) -> Result<Self, HarnessError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if headers.len() < key_count {
            return Err(HarnessError::Invalid("fewer columns than keys".into()));
        }
        let mut t = Table {
            name: name.to_string(),
            key_columns: headers[..key_count].to_vec(),
            value_columns: headers[key_count..].to_vec(),
            rows: Vec::new(),
        };
        for rec in r.records() {
            let rec = rec?;
            let keys = rec.iter().take(key_count).map(String::from).collect();
            let values = rec
                .iter()
                .skip(key_count)
                .map(|s| match s {
                    "NA" => Ok(None),
                    v => v.parse().map(Some).map_err(|_| HarnessError::Invalid(format!("bad number '{v}'"))),
                })
                .collect::<Result<_, _>>()?;
            t.rows.push(ReportRow { keys, values });
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: String,
    pub fingerprint: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub tables: Vec<Table>,
}

impl ExperimentReport {
    pub fn new(kind: &str, config: &ExperimentConfig) -> Self {
        Self {
            kind: kind.to_string(),
            fingerprint: config.fingerprint(),
            seed: config.seed,
            config: config.clone(),
            tables: Vec::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Writes `report` under `dir`: one JSON file, or one CSV per table.
/// Returns the paths written.
pub fn write_report(report: &ExperimentReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Json => {
            let path = dir.join(format!("{}.json", report.kind));
            fs::write(&path, report.to_json()).map_err(|e| HarnessError::io(&path, e))?;
            written.push(path);
        }
        ReportFormat::Csv => {
            for t in &report.tables {
                let path = dir.join(format!("{}_{}.csv", report.kind, t.name));
                fs::write(&path, t.to_csv()?).map_err(|e| HarnessError::io(&path, e))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Wall-clock data kept apart from the reproducible payload.
pub fn write_timing(dir: &Path, kind: &str, seconds: f64) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let path = dir.join(format!("{kind}.timing.json"));
    let body = serde_json::json!({ "kind": kind, "wall_clock_seconds": seconds });
    fs::write(&path, body.to_string()).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}
