//! Parameter sweeps: expansion of a [`SweepSpec`] into cells, isolated
//! execution of each cell, and the combined `cells.csv`.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::presets;
use super::report::PlotSpec;
use super::run::{run_config, write_run, RunOutput};
use super::{apply_overrides, config_value, create_dir, get_param, io_err, HarnessError};
use crate::config::ExperimentConfig;
use crate::metrics::RunReport;

pub const CELLS_FILE: &str = "cells.csv";

/// Where the base configuration of a sweep comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseRef {
    Preset {
        preset: String,
        #[serde(default)]
        set: BTreeMap<String, Value>,
    },
    Inline(Box<ExperimentConfig>),
}

impl BaseRef {
    pub fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        match self {
            BaseRef::Inline(cfg) => Ok((**cfg).clone()),
            BaseRef::Preset { preset, set } => {
                let base = presets::config(preset)?;
                apply_overrides(&base, set.iter().map(|(k, v)| (k.as_str(), v)))
            }
        }
    }
}

/// One axis: linked parameters that change together. Each value is an
/// array with one entry per parameter, or a scalar for a single parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub params: Vec<String>,
    pub values: Vec<Value>,
}

impl Axis {
    fn assignment(&self, i: usize) -> Result<Vec<(String, Value)>, HarnessError> {
        let v = &self.values[i];
        let row: Vec<Value> = match v {
            Value::Array(items) => items.clone(),
            scalar if self.params.len() == 1 => vec![scalar.clone()],
            _ => {
                return Err(HarnessError::Spec(format!(
                    "axis {:?}: value {v} needs {} entries",
                    self.params,
                    self.params.len()
                )))
            }
        };
        if row.len() != self.params.len() {
            return Err(HarnessError::Spec(format!(
                "axis {:?}: value {v} needs {} entries",
                self.params,
                self.params.len()
            )));
        }
        Ok(self.params.iter().cloned().zip(row).collect())
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Cartesian product of all axes.
    #[default]
    Cross,
    /// i-th value of every axis together; axes must have equal length.
    Paired,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub name: String,
    pub base: BaseRef,
    #[serde(default)]
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub mode: SweepMode,
    #[serde(default = "one")]
    pub repeats: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<PlotSpec>,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))
    }

    /// Varied parameter paths in column order.
    pub fn params(&self) -> Vec<String> {
        self.axes.iter().flat_map(|a| a.params.iter().cloned()).collect()
    }

    /// Expands into cells. Seeds are `base seed + cell index`.
    pub fn expand(&self) -> Result<Vec<Cell>, HarnessError> {
        let base = self.base.resolve()?;
        base.validate()?;
        if self.repeats == 0 {
            return Err(HarnessError::Spec("repeats must be at least 1".into()));
        }
        let base_value = config_value(&base);
        for p in self.params() {
            if get_param(&base_value, &p).is_none() {
                return Err(HarnessError::UnknownParam(p));
            }
        }
        if let Some(a) = self.axes.iter().find(|a| a.params.is_empty() || a.values.is_empty()) {
            return Err(HarnessError::Spec(format!("axis {:?} is empty", a.params)));
        }
        let points: Vec<Vec<usize>> = match self.mode {
            SweepMode::Cross => self.axes.iter().fold(vec![vec![]], |acc, axis| {
                acc.iter()
                    .flat_map(|prefix| {
                        (0..axis.values.len()).map(move |i| {
                            let mut p = prefix.clone();
                            p.push(i);
                            p
                        })
                    })
                    .collect()
            }),
            SweepMode::Paired => {
                let len = self.axes.first().map_or(1, |a| a.values.len());
                if self.axes.iter().any(|a| a.values.len() != len) {
                    return Err(HarnessError::Spec("paired axes must have equal length".into()));
                }
                (0..len).map(|i| vec![i; self.axes.len()]).collect()
            }
        };
        let mut cells = Vec::new();
        for point in points {
            let mut assignment = Vec::new();
            for (axis, &i) in self.axes.iter().zip(&point) {
                assignment.extend(axis.assignment(i)?);
            }
            for repeat in 0..self.repeats {
                let index = cells.len() as u64;
                let seed = base.run.seed.wrapping_add(index);
                let config = apply_overrides(&base, assignment.iter().map(|(k, v)| (k.as_str(), v)))
                    .and_then(|mut c| {
                        c.run.seed = seed;
                        c.validate()?;
                        Ok(c)
                    })
                    .map_err(|e| e.to_string());
                cells.push(Cell {
                    index,
                    repeat,
                    seed,
                    assignment: assignment.clone(),
                    config,
                });
            }
        }
        Ok(cells)
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub index: u64,
    pub repeat: u32,
    pub seed: u64,
    pub assignment: Vec<(String, Value)>,
    /// `Err` holds the reason the cell's config is invalid.
    pub config: Result<ExperimentConfig, String>,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: Result<RunReport, String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Worker pool when built with the `parallel` feature, otherwise the
    /// same as `Sequential`.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Runs one cell. Panics inside the simulation become the cell's error.
pub fn run_cell(cell: &Cell, out: Option<&Path>) -> CellResult {
    let outcome = match &cell.config {
        Err(e) => Err(e.clone()),
        Ok(cfg) => match catch_unwind(AssertUnwindSafe(|| run_config(cfg))) {
            Ok(Ok(run)) => match out {
                Some(dir) => write_run(&cell_dir(dir, cell.index), &run)
                    .map(|_| run.report)
                    .map_err(|e| e.to_string()),
                None => Ok(run.report),
            },
            Ok(Err(e)) => Err(e.to_string()),
            Err(panic) => Err(panic_message(panic.as_ref())),
        },
    };
    CellResult {
        cell: cell.clone(),
        outcome,
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    let msg = p
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    format!("panic: {msg}")
}

pub fn cell_dir(out: &Path, index: u64) -> std::path::PathBuf {
    out.join("cells").join(format!("cell_{index:04}"))
}

/// Runs every cell; results come back in cell order either way.
pub fn execute(cells: &[Cell], exec: Execution, out: Option<&Path>) -> Vec<CellResult> {
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            cells.par_iter().map(|c| run_cell(c, out)).collect()
        }
        _ => cells.iter().map(|c| run_cell(c, out)).collect(),
    }
}

/// Runs independent configs; outputs come back in input order.
pub fn run_many(cfgs: &[ExperimentConfig], exec: Execution) -> Vec<Result<RunOutput, HarnessError>> {
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            cfgs.par_iter().map(run_config).collect()
        }
        _ => cfgs.iter().map(run_config).collect(),
    }
}

/// Expands, executes, and (with `out`) writes per-cell artifacts plus
/// `cells.csv`.
pub fn sweep(spec: &SweepSpec, exec: Execution, out: Option<&Path>) -> Result<Vec<CellResult>, HarnessError> {
    let cells = spec.expand()?;
    if let Some(dir) = out {
        create_dir(dir)?;
    }
    let results = execute(&cells, exec, out);
    if let Some(dir) = out {
        let path = dir.join(CELLS_FILE);
        let file = std::fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = std::io::BufWriter::new(file);
        write_cells_csv(&mut w, spec, &results)?;
        w.flush().map_err(io_err(&path))?;
    }
    Ok(results)
}

pub const METRIC_COLUMNS: [&str; 19] = [
    "status",
    "error",
    "offered_tps",
    "throughput_tps",
    "avg_latency_s",
    "p50_s",
    "p95_s",
    "r_ratio",
    "r_final",
    "submitted",
    "committed",
    "invalid_committed",
    "dropped_endorse",
    "dropped_broadcast",
    "in_flight",
    "blocks",
    "mean_block_fill",
    "agreed",
    "truncated",
];

fn opt_f(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metric_row(outcome: &Result<RunReport, String>) -> Vec<String> {
    match outcome {
        Err(e) => {
            let mut row = vec!["error".to_string(), e.clone()];
            row.resize(METRIC_COLUMNS.len(), String::new());
            row
        }
        Ok(r) => vec![
            "ok".into(),
            String::new(),
            r.offered_tps.to_string(),
            r.throughput_tps.to_string(),
            opt_f(r.latency.avg_s),
            opt_f(r.latency.p50_s),
            opt_f(r.latency.p95_s),
            opt_f(r.r_window),
            opt_f(r.r_final),
            r.status.submitted.to_string(),
            r.status.committed.to_string(),
            r.status.invalid_committed.to_string(),
            r.status.dropped_endorsement.to_string(),
            r.status.dropped_broadcast.to_string(),
            r.status.in_flight.to_string(),
            r.blocks.count.to_string(),
            r.blocks.mean_fill.to_string(),
            r.agreement.agreed.to_string(),
            r.trace.as_ref().is_some_and(|t| t.truncated).to_string(),
        ],
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `cells.csv`: a `#` line with the sweep spec and resolved base config,
/// then one row per cell.
pub fn write_cells_csv<W: Write>(w: &mut W, spec: &SweepSpec, results: &[CellResult]) -> Result<(), HarnessError> {
    let base = spec.base.resolve()?;
    writeln!(w, "# {}", json!({ "sweep": spec, "base_config": base })).map_err(csv::Error::from)?;
    let params = spec.params();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["cell".to_string(), "repeat".into(), "seed".into()];
    header.extend(params.iter().cloned());
    header.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    out.write_record(&header)?;
    for r in results {
        let mut row = vec![
            r.cell.index.to_string(),
            r.cell.repeat.to_string(),
            r.cell.seed.to_string(),
        ];
        row.extend(r.cell.assignment.iter().map(|(_, v)| scalar_text(v)));
        row.extend(metric_row(&r.outcome));
        out.write_record(&row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(axes: Value, mode: &str, repeats: u32) -> SweepSpec {
        let mut base = ExperimentConfig::default();
        base.run.duration_us = 1_000_000;
        base.run.drain_us = 1_000_000;
        base.run.seed = 10;
        SweepSpec::from_json(&json!({ "base": base, "axes": axes, "mode": mode, "repeats": repeats }).to_string())
            .unwrap()
    }

    #[test]
    fn cross_product_counts_and_seeds() {
        let s = spec(
            json!([
                { "params": ["topology.brokers"], "values": [4, 8, 16] },
                { "params": ["topology.endorsing_peers", "topology.clients"], "values": [[4, 4], [8, 8]] }
            ]),
            "cross",
            2,
        );
        let cells = s.expand().unwrap();
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[5].seed, 15);
        let cfg = cells[3].config.as_ref().unwrap();
        assert_eq!(
            (cfg.topology.brokers, cfg.topology.endorsing_peers, cfg.topology.clients),
            (4, 8, 8)
        );
    }

    #[test]
    fn paired_axes_zip() {
        let s = spec(
            json!([
                { "params": ["topology.orderers"], "values": [4, 5, 6] },
                { "params": ["rate.total_tps"], "values": [100.0, 200.0, 300.0] }
            ]),
            "paired",
            1,
        );
        let cells = s.expand().unwrap();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[2].config.as_ref().unwrap().total_tps(), 300.0);
    }

    #[test]
    fn empty_axes_is_one_cell() {
        let s = spec(json!([]), "cross", 1);
        let cells = s.expand().unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].seed, 10);
    }

    #[test]
    fn unknown_axis_parameter_is_rejected() {
        let s = spec(json!([{ "params": ["topology.kafka"], "values": [1] }]), "cross", 1);
        assert!(matches!(s.expand(), Err(HarnessError::UnknownParam(p)) if p == "topology.kafka"));
    }

    #[test]
    fn invalid_cell_is_recorded_not_fatal() {
        let s = spec(
            json!([{ "params": ["topology.orderers"], "values": [0, 2] }]),
            "cross",
            1,
        );
        let results = execute(&s.expand().unwrap(), Execution::Sequential, None);
        assert!(results[0].outcome.is_err());
        assert!(results[1].outcome.is_ok());
        let mut buf = Vec::new();
        write_cells_csv(&mut buf, &s, &results).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# {"));
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(2).unwrap().contains(",error,"));
    }
}
