//! Per-run metrics and their CSV/JSON serialization.
//!
//! A run at `<stem>.csv` writes one row per epoch (epoch 0 is the evaluation
//! before any training), a `<stem>.json` sidecar echoing the configuration,
//! and, when per-sample losses were recorded, `<stem>.samples.csv`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// One row of the metrics CSV. Column order is fixed by field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_loss: f64,
    pub test_acc: Option<f64>,
    /// ANP samples skipped for a zero activity difference.
    pub skips: u64,
    /// Replay trace wrap-arounds during the epoch.
    pub wraps: u64,
    /// Mean off-diagonal covariance norm of the decorrelated layer inputs.
    pub decorrelation: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 8] = [
    "epoch",
    "train_loss",
    "train_acc",
    "test_loss",
    "test_acc",
    "skips",
    "wraps",
    "decorrelation",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub train_size: usize,
    pub test_size: usize,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub records: Vec<EpochRecord>,
    /// Clean per-sample training losses, one vector per recorded epoch.
    #[serde(skip)]
    pub sample_losses: Vec<Vec<f64>>,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Selection score: final test accuracy, or negated final test loss for
    /// regression tasks.
    pub fn score(&self) -> Option<f64> {
        let r = self.last()?;
        Some(r.test_acc.unwrap_or(-r.test_loss))
    }

    /// Equality of everything a run computes, ignoring wall time.
    pub fn same_results(&self, other: &RunMetrics) -> bool {
        self.records == other.records && self.sample_losses == other.sample_losses
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn samples_path(csv: &Path) -> PathBuf {
    csv.with_extension("samples.csv")
}

pub fn write_records(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if headers != CSV_COLUMNS {
        return Err(HarnessError::Metrics(format!(
            "{}: unexpected columns {headers:?}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Writes the CSV, the JSON config echo and (if present) per-sample losses.
pub fn emit_metrics(m: &RunMetrics, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_records(&m.records, path)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(m)?)?;
    if !m.sample_losses.is_empty() {
        let mut w = csv::Writer::from_path(samples_path(path))?;
        w.write_record(["epoch", "sample", "loss"])?;
        for (e, losses) in m.sample_losses.iter().enumerate() {
            for (s, l) in losses.iter().enumerate() {
                w.serialize((e, s, l))?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<RunMetrics> {
    let mut m: RunMetrics = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    m.records = read_records(path)?;
    let sp = samples_path(path);
    if sp.exists() {
        let mut r = csv::Reader::from_path(sp)?;
        for row in r.deserialize() {
            let (e, s, l): (usize, usize, f64) = row?;
            if e == m.sample_losses.len() {
                m.sample_losses.push(Vec::new());
            }
            let epoch = m
                .sample_losses
                .get_mut(e)
                .filter(|v| v.len() == s)
                .ok_or_else(|| HarnessError::Metrics("per-sample losses out of order".into()))?;
            epoch.push(l);
        }
    }
    Ok(m)
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
