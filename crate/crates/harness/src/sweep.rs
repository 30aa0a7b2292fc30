//! Grid sweeps over configuration fields.
//!
//! A grid file holds a complete `[base]` configuration and any number of
//! `[[axis]]` tables, each naming a (dotted) config field and the values it
//! takes:
//!
//! ```toml
//! [base]
//! dataset = "teacher"
//! # ...
//!
//! [[axis]]
//! name = "eta"
//! values = [1.0, 0.5, 0.1]
//!
//! [[axis]]
//! name = "noise.sigma"
//! values = [0.01, 0.001]
//! ```
//!
//! The grid is the Cartesian product, last axis varying fastest.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::config::{DatasetKind, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::metrics::{emit_metrics, read_metrics, RunMetrics};
use crate::runner::{load_data, run_with_data, RunData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub base: ExperimentConfig,
    #[serde(default, rename = "axis")]
    pub axes: Vec<Axis>,
}

impl SweepGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        let g: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if g.axes.iter().any(|a| a.values.is_empty()) {
            return Err(HarnessError::Config("every axis needs at least one value".into()));
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every grid point in order. Points whose overrides produce an invalid
    /// configuration carry the error instead of a config.
    pub fn expand(&self) -> Result<Vec<GridPoint>> {
        let base = Value::try_from(&self.base).map_err(|e| HarnessError::Config(e.to_string()))?;
        let n = self.len();
        let mut points = Vec::with_capacity(n);
        for index in 0..n {
            let mut rem = index;
            let mut picks = vec![0; self.axes.len()];
            for (k, axis) in self.axes.iter().enumerate().rev() {
                picks[k] = rem % axis.values.len();
                rem /= axis.values.len();
            }
            let overrides: Vec<(String, Value)> = self
                .axes
                .iter()
                .zip(&picks)
                .map(|(a, &i)| (a.name.clone(), a.values[i].clone()))
                .collect();
            let mut v = base.clone();
            let config = overrides
                .iter()
                .try_for_each(|(path, val)| set_field(&mut v, path, val.clone()))
                .and_then(|()| {
                    let cfg: ExperimentConfig = v.try_into().map_err(|e: toml::de::Error| e.to_string())?;
                    cfg.validate().map_err(|e| e.to_string())?;
                    Ok(cfg)
                });
            points.push(GridPoint {
                index,
                overrides,
                config,
            });
        }
        Ok(points)
    }
}

/// Sets a dotted field inside a TOML table, creating intermediate tables.
pub fn set_field(root: &mut Value, path: &str, val: Value) -> std::result::Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| format!("{path}: {} is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), val);
            return Ok(());
        }
        cur = table
            .entry((*part).to_string())
            .or_insert_with(|| Value::Table(Default::default()));
    }
    Err(format!("empty axis name {path:?}"))
}

#[derive(Debug, Clone)]
pub struct GridPoint {
    pub index: usize,
    pub overrides: Vec<(String, Value)>,
    pub config: std::result::Result<ExperimentConfig, String>,
}

#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub index: usize,
    pub overrides: Vec<(String, Value)>,
    pub result: std::result::Result<RunMetrics, String>,
}

impl PointOutcome {
    pub fn score(&self) -> Option<f64> {
        self.result.as_ref().ok().and_then(RunMetrics::score).filter(|s| !s.is_nan())
    }
}

/// Min/max selection score over every run sharing one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub axis: String,
    pub value: String,
    pub min: f64,
    pub max: f64,
    pub runs: usize,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub points: Vec<PointOutcome>,
    pub best: Option<usize>,
    pub envelopes: Vec<Envelope>,
}

/// Highest score wins; ties go to the lowest index.
pub fn select_best(scores: &[(usize, Option<f64>)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(i, s) in scores {
        if let Some(s) = s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

pub fn envelopes(points: &[PointOutcome]) -> Vec<Envelope> {
    let mut out: Vec<Envelope> = Vec::new();
    for p in points {
        let Some(score) = p.score() else { continue };
        for (axis, val) in &p.overrides {
            let value = val.to_string();
            match out.iter_mut().find(|e| &e.axis == axis && e.value == value) {
                Some(e) => {
                    e.min = e.min.min(score);
                    e.max = e.max.max(score);
                    e.runs += 1;
                }
                None => out.push(Envelope {
                    axis: axis.clone(),
                    value,
                    min: score,
                    max: score,
                    runs: 1,
                }),
            }
        }
    }
    out
}

fn data_key(cfg: &ExperimentConfig) -> String {
    let seed_matters = cfg.shuffle_labels || cfg.dataset == DatasetKind::Teacher;
    format!(
        "{:?}|{:?}|{:?}|{:?}|{}|{}|{:?}",
        cfg.dataset,
        cfg.data_dir(),
        cfg.train_cap,
        cfg.test_cap,
        cfg.standardize,
        cfg.shuffle_labels,
        seed_matters.then(|| cfg.teacher_seed.unwrap_or(cfg.seed)),
    )
}

pub fn point_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("point_{index:04}.csv"))
}

/// Runs every grid point on `threads` workers. Failures are recorded per
/// point and never abort the sweep. With `out_dir`, each finished point's
/// metrics are written as `point_NNNN.csv`.
pub fn run_sweep(grid: &SweepGrid, threads: usize, out_dir: Option<&Path>) -> Result<SweepSummary> {
    let points = grid.expand()?;
    if points.is_empty() {
        return Err(HarnessError::Config("empty sweep grid".into()));
    }
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d)?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<PointOutcome>>> = Mutex::new(vec![None; points.len()]);
    let cache: Mutex<HashMap<String, Arc<RunData>>> = Mutex::new(HashMap::new());
    let run_point = |p: &GridPoint| -> std::result::Result<RunMetrics, String> {
        let cfg = p.config.clone()?;
        let key = data_key(&cfg);
        let cached = cache.lock().expect("cache lock").get(&key).cloned();
        let data = match cached {
            Some(d) => d,
            None => {
                let d = Arc::new(load_data(&cfg).map_err(|e| e.to_string())?);
                cache.lock().expect("cache lock").insert(key, d.clone());
                d
            }
        };
        let m = run_with_data(&cfg, &data).map_err(|e| e.to_string())?;
        if let Some(d) = out_dir {
            emit_metrics(&m, &point_path(d, p.index)).map_err(|e| e.to_string())?;
        }
        Ok(m)
    };
    std::thread::scope(|s| {
        for _ in 0..threads.max(1).min(points.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = points.get(i) else { break };
                let outcome = PointOutcome {
                    index: p.index,
                    overrides: p.overrides.clone(),
                    result: run_point(p),
                };
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    let points: Vec<PointOutcome> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|o| o.expect("every point ran"))
        .collect();
    let best = select_best(&points.iter().map(|p| (p.index, p.score())).collect::<Vec<_>>());
    let envelopes = envelopes(&points);
    let summary = SweepSummary {
        points,
        best,
        envelopes,
    };
    if let Some(d) = out_dir {
        write_summary(&summary, d)?;
    }
    Ok(summary)
}

/// `summary.csv` (one row per point) and `envelopes.csv`.
pub fn write_summary(s: &SweepSummary, dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    let axes: Vec<String> = s
        .points
        .first()
        .map(|p| p.overrides.iter().map(|(a, _)| a.clone()).collect())
        .unwrap_or_default();
    let mut header = vec!["index".to_string()];
    header.extend(axes.iter().cloned());
    header.extend(["status", "final_test_loss", "final_test_acc", "score", "best"].map(String::from));
    w.write_record(&header)?;
    for p in &s.points {
        let mut row = vec![p.index.to_string()];
        row.extend(p.overrides.iter().map(|(_, v)| v.to_string()));
        let last = p.result.as_ref().ok().and_then(RunMetrics::last);
        row.push(match &p.result {
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e}"),
        });
        row.push(last.map(|r| r.test_loss.to_string()).unwrap_or_default());
        row.push(last.and_then(|r| r.test_acc).map(|a| a.to_string()).unwrap_or_default());
        row.push(p.score().map(|v| v.to_string()).unwrap_or_default());
        row.push((s.best == Some(p.index)).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("envelopes.csv"))?;
    for e in &s.envelopes {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

/// Re-selects the best point from metrics files saved by [`run_sweep`].
pub fn reselect_best(dir: &Path) -> Result<Option<usize>> {
    let mut scores = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(index) = name
            .strip_prefix("point_")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|r| r.parse::<usize>().ok())
        else {
            continue;
        };
        scores.push((index, read_metrics(&path)?.score()));
    }
    scores.sort_by_key(|s| s.0);
    Ok(select_best(&scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
[base]
dataset = "teacher"
rule = "anp"
loss = "squared_error"
optimizer = "adam"
eta = 1e-2
epochs = 2
seed = 1
hidden = [2, 2]
batch_size = 20

[base.noise]
kind = "gaussian"
sigma = 0.01

[[axis]]
name = "seed"
values = [1, 2, 3]
"#;

    #[test]
    fn seeds_give_three_runs_and_envelope() {
        let grid = SweepGrid::from_toml(GRID).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let s = run_sweep(&grid, 2, Some(dir.path())).unwrap();
        assert_eq!(s.points.len(), 3);
        let scores: Vec<f64> = s.points.iter().map(|p| p.score().unwrap()).collect();
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(s.envelopes.len(), 3);
        assert!(s.envelopes.iter().all(|e| e.axis == "seed" && e.runs == 1));
        assert_eq!(s.envelopes.iter().map(|e| e.min).fold(f64::INFINITY, f64::min), lo);
        assert_eq!(s.envelopes.iter().map(|e| e.max).fold(f64::NEG_INFINITY, f64::max), hi);
        assert_eq!(reselect_best(dir.path()).unwrap(), s.best);
        assert!(dir.path().join("summary.csv").exists());
    }

    #[test]
    fn nested_axes_and_failures() {
        let text = format!(
            "{GRID}\n[[axis]]\nname = \"noise.sigma\"\nvalues = [0.01, -1.0]\n"
        );
        let grid = SweepGrid::from_toml(&text).unwrap();
        assert_eq!(grid.len(), 6);
        let pts = grid.expand().unwrap();
        assert!(pts[0].config.is_ok());
        assert!(pts[1].config.is_err());
        let s = run_sweep(&grid, 1, None).unwrap();
        assert_eq!(s.points.iter().filter(|p| p.result.is_err()).count(), 3);
        assert!(s.best.is_some_and(|b| b % 2 == 0));
    }

    #[test]
    fn duplicate_points_are_identical_across_thread_counts() {
        let text = GRID.replace("values = [1, 2, 3]", "values = [5, 5]");
        let grid = SweepGrid::from_toml(&text).unwrap();
        let a = run_sweep(&grid, 2, None).unwrap();
        let b = run_sweep(&grid, 1, None).unwrap();
        let m = |s: &SweepSummary, i: usize| s.points[i].result.clone().unwrap();
        assert!(m(&a, 0).same_results(&m(&a, 1)));
        assert!(m(&a, 0).same_results(&m(&b, 0)));
    }

    #[test]
    fn appendix_grid_size() {
        let etas = "[1.0, 0.5, 0.1, 0.07, 0.04, 0.01, 0.007, 0.004, 0.001, 0.0005]";
        let epss = "[1e-2, 5e-3, 1e-3, 7e-4, 4e-4, 1e-4, 7e-5, 4e-5, 1e-5, 5e-6]";
        let text = GRID.replace("rule = \"anp\"", "rule = \"danp\"\ndecorrelation_eps = 1e-4").replace(
            "[[axis]]\nname = \"seed\"\nvalues = [1, 2, 3]",
            &format!("[[axis]]\nname = \"eta\"\nvalues = {etas}\n[[axis]]\nname = \"decorrelation_eps\"\nvalues = {epss}"),
        );
        let grid = SweepGrid::from_toml(&text).unwrap();
        assert_eq!(grid.len(), 100);
        assert!(grid.expand().unwrap().iter().all(|p| p.config.is_ok()));
    }

    #[test]
    fn select_best_breaks_ties_by_index() {
        assert_eq!(select_best(&[(0, Some(0.5)), (1, Some(0.9)), (2, Some(0.9)), (3, None)]), Some(1));
        assert_eq!(select_best(&[(0, None)]), None);
    }
}
