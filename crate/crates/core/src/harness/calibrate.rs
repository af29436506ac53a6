//! Bisection on one numeric knob so that a topology starts to saturate at
//! a chosen offered rate.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::run::run_config;
use super::{apply_overrides, HarnessError};
use crate::config::ExperimentConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrateSpec {
    /// Dotted path of the knob; capacity must fall as the knob grows.
    pub param: String,
    pub lo: f64,
    pub hi: f64,
    /// Offered total rate at which saturation should begin.
    pub target_tps: f64,
    /// Throughput/offered ratio that marks the onset.
    pub efficiency: f64,
    pub iterations: u32,
    /// Round knob values to integers.
    pub integer: bool,
}

impl Default for CalibrateSpec {
    fn default() -> Self {
        CalibrateSpec {
            param: "network.per_byte_ns".into(),
            lo: 0.0,
            hi: 400.0,
            target_tps: 325.0,
            efficiency: 0.95,
            iterations: 10,
            integer: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub value: f64,
    pub throughput_tps: f64,
    pub efficiency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub param: String,
    /// Largest probed value that still keeps up at the target rate.
    pub value: f64,
    pub probes: Vec<Probe>,
}

fn knob(v: f64, integer: bool) -> Value {
    if integer {
        Value::from(v.round() as i64)
    } else {
        Value::from(v)
    }
}

pub fn probe(base: &ExperimentConfig, spec: &CalibrateSpec, value: f64) -> Result<Probe, HarnessError> {
    let rate = Value::from(spec.target_tps);
    let v = knob(value, spec.integer);
    let cfg = apply_overrides(base, [(spec.param.as_str(), &v), ("rate.total_tps", &rate)])?;
    let run = run_config(&cfg)?;
    let thr = run.report.throughput_tps;
    Ok(Probe {
        value: v.as_f64().unwrap_or(value),
        throughput_tps: thr,
        efficiency: thr / spec.target_tps,
    })
}

pub fn calibrate(base: &ExperimentConfig, spec: &CalibrateSpec) -> Result<Calibration, HarnessError> {
    if spec.lo.partial_cmp(&spec.hi) != Some(std::cmp::Ordering::Less) || spec.target_tps <= 0.0 {
        return Err(HarnessError::Spec(
            "calibration needs lo < hi and a positive target".into(),
        ));
    }
    let (mut lo, mut hi) = (spec.lo, spec.hi);
    let mut probes = Vec::new();
    let mut best = lo;
    for _ in 0..spec.iterations {
        let mut mid = (lo + hi) / 2.0;
        if spec.integer {
            mid = mid.round();
            if mid <= lo || mid >= hi {
                break;
            }
        }
        let p = probe(base, spec, mid)?;
        if p.efficiency >= spec.efficiency {
            lo = mid;
            best = mid;
        } else {
            hi = mid;
        }
        probes.push(p);
    }
    Ok(Calibration {
        param: spec.param.clone(),
        value: best,
        probes,
    })
}
