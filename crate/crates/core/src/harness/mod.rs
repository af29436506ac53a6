//! Experiment plumbing: single runs, parameter sweeps, plot data, and
//! calibration, plus the named presets shipped with the crate.

use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};

pub mod calibrate;
pub mod presets;
pub mod report;
pub mod run;
pub mod sweep;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid sweep spec: {0}")]
    Spec(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl HarnessError {
    /// Errors caused by user input rather than by executing a run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::Spec(_)
                | HarnessError::UnknownParam(_)
                | HarnessError::UnknownPreset(_)
                | HarnessError::MissingColumn(_)
        )
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

pub fn read_file(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Sets a dotted `path` (object keys or array indices) inside a fully
/// serialized config. Every segment must already exist. Setting one of the
/// two rate fields clears the other.
pub fn set_param(root: &mut Value, path: &str, value: Value) -> Result<(), HarnessError> {
    let unknown = || HarnessError::UnknownParam(path.to_string());
    let mut segments: Vec<&str> = path.split('.').collect();
    let last = segments.pop().filter(|s| !s.is_empty()).ok_or_else(unknown)?;
    let mut node = &mut *root;
    for seg in segments {
        node = child(node, seg).ok_or_else(unknown)?;
    }
    let slot = child(node, last).ok_or_else(unknown)?;
    *slot = value;
    if let Some(other) = match path {
        "rate.total_tps" => Some("per_client_tps"),
        "rate.per_client_tps" => Some("total_tps"),
        _ => None,
    } {
        node[other] = Value::Null;
    }
    Ok(())
}

fn child<'a>(node: &'a mut Value, seg: &str) -> Option<&'a mut Value> {
    match node {
        Value::Object(map) => map.get_mut(seg),
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
        _ => None,
    }
}

/// Reads a dotted path from a serialized config.
pub fn get_param<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(root, |node, seg| match node {
        Value::Object(map) => map.get(seg),
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    })
}

/// Serialized config with every overridable key present, unset rate
/// fields included as `null`.
pub fn config_value(cfg: &ExperimentConfig) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    for key in ["total_tps", "per_client_tps"] {
        v["rate"]
            .as_object_mut()
            .expect("rate is an object")
            .entry(key)
            .or_insert(Value::Null);
    }
    v
}

/// Applies `(path, value)` pairs and re-parses the result.
pub fn apply_overrides<'a, I>(base: &ExperimentConfig, pairs: I) -> Result<ExperimentConfig, HarnessError>
where
    I: IntoIterator<Item = (&'a str, &'a Value)>,
{
    let mut v = config_value(base);
    for (path, value) in pairs {
        set_param(&mut v, path, value.clone())?;
    }
    Ok(ExperimentConfig::from_value(v)?)
}
