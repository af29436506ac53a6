//! Experiment configuration: the JSON schema read by the harness, semantic
//! validation, and the latency model it resolves to.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaincode::WorkloadConfig;
use crate::message::MessageSizes;
use crate::ordering::BlockCutterConfig;
use crate::sim::{LatencyModel, LinkCost, NodeClass, SimDuration};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Topology {
    pub endorsing_peers: u32,
    pub clients: u32,
    pub orderers: u32,
    pub brokers: u32,
    pub non_endorsing_peers: u32,
    /// Reported only; coordination nodes are not simulated.
    pub zookeepers: u32,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            endorsing_peers: 4,
            clients: 4,
            orderers: 4,
            brokers: 4,
            non_endorsing_peers: 0,
            zookeepers: 3,
        }
    }
}

/// Offered load; exactly one of the two fields is set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_tps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_client_tps: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Matching endorsements required; all endorsing peers when absent.
    pub threshold: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplicationConfig {
    /// Copies per record; `brokers - 1` (at least 1) when absent.
    pub replication_factor: Option<u32>,
    /// Copies needed to commit; `min(2, replication_factor)` when absent.
    pub min_insync: Option<u32>,
    pub orderer_queue_capacity: u32,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        ReplicationConfig {
            replication_factor: None,
            min_insync: None,
            orderer_queue_capacity: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub a: NodeClass,
    pub b: NodeClass,
    pub base_latency_us: u64,
    pub per_byte_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub base_latency_us: u64,
    pub per_byte_ns: u64,
    pub jitter_fraction: f64,
    /// Class pairs that differ from the default link.
    pub overrides: Vec<LinkOverride>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_latency_us: 500,
            per_byte_ns: 8,
            jitter_fraction: 0.0,
            overrides: Vec::new(),
        }
    }
}

impl NetworkConfig {
    pub fn latency_model(&self) -> LatencyModel {
        let mut m = LatencyModel::uniform(
            SimDuration::from_micros(self.base_latency_us),
            self.per_byte_ns,
            self.jitter_fraction,
        );
        for o in &self.overrides {
            m = m.with_pair(
                o.a,
                o.b,
                LinkCost {
                    base: SimDuration::from_micros(o.base_latency_us),
                    per_byte_ns: o.per_byte_ns,
                },
            );
        }
        m
    }
}

/// CPU service time per operation, in microseconds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceTimes {
    pub endorse_us: u64,
    pub validate_per_txn_us: u64,
    /// Signature check per endorsement carried by a validated transaction.
    pub validate_per_endorsement_us: u64,
    pub log_append_us: u64,
    pub orderer_envelope_us: u64,
}

impl Default for ServiceTimes {
    fn default() -> Self {
        ServiceTimes {
            endorse_us: 1_000,
            validate_per_txn_us: 100,
            validate_per_endorsement_us: 0,
            log_append_us: 0,
            orderer_envelope_us: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timeouts {
    pub endorse_timeout_us: u64,
    pub broadcast_timeout_us: u64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts {
            endorse_timeout_us: 1_000_000,
            broadcast_timeout_us: 2_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Submission phase length.
    pub duration_us: u64,
    /// Extra simulated time allowed after the last submission.
    pub drain_us: u64,
    /// Leading share of the submission phase excluded from measurement.
    pub warmup_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            duration_us: 30_000_000,
            drain_us: 30_000_000,
            warmup_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub topology: Topology,
    pub rate: Rate,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub cutter: BlockCutterConfig,
    #[serde(default)]
    pub replication: ReplicationConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub service: ServiceTimes,
    #[serde(default)]
    pub timeouts: Timeouts,
    #[serde(default)]
    pub sizes: MessageSizes,
    #[serde(default)]
    pub run: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            topology: Topology::default(),
            rate: Rate {
                total_tps: Some(100.0),
                per_client_tps: None,
            },
            workload: WorkloadConfig::default(),
            policy: PolicyConfig::default(),
            cutter: BlockCutterConfig::default(),
            replication: ReplicationConfig::default(),
            network: NetworkConfig::default(),
            service: ServiceTimes::default(),
            timeouts: Timeouts::default(),
            sizes: MessageSizes::default(),
            run: RunConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Offered load summed over all clients.
    pub fn total_tps(&self) -> f64 {
        match (self.rate.total_tps, self.rate.per_client_tps) {
            (Some(t), _) => t,
            (None, Some(p)) => p * self.topology.clients as f64,
            (None, None) => 0.0,
        }
    }

    pub fn per_client_tps(&self) -> f64 {
        self.total_tps() / self.topology.clients as f64
    }

    pub fn replication_factor(&self) -> u32 {
        self.replication
            .replication_factor
            .unwrap_or(self.topology.brokers.saturating_sub(1).max(1))
    }

    pub fn min_insync(&self) -> u32 {
        self.replication.min_insync.unwrap_or(self.replication_factor().min(2))
    }

    pub fn policy_threshold(&self) -> u32 {
        self.policy.threshold.unwrap_or(self.topology.endorsing_peers)
    }

    pub fn duration(&self) -> SimDuration {
        SimDuration::from_micros(self.run.duration_us)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.topology;
        for (field, v) in [
            ("topology.endorsing_peers", t.endorsing_peers),
            ("topology.clients", t.clients),
            ("topology.orderers", t.orderers),
            ("topology.brokers", t.brokers),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        match (self.rate.total_tps, self.rate.per_client_tps) {
            (Some(_), Some(_)) => return Err(invalid("rate", "set either total_tps or per_client_tps, not both")),
            (None, None) => return Err(invalid("rate", "set total_tps or per_client_tps")),
            (Some(r), None) if !(r.is_finite() && r > 0.0) => {
                return Err(invalid("rate.total_tps", "must be a positive number"))
            }
            (None, Some(r)) if !(r.is_finite() && r > 0.0) => {
                return Err(invalid("rate.per_client_tps", "must be a positive number"))
            }
            _ => {}
        }
        self.workload.validate().map_err(|reason| invalid("workload", reason))?;
        let th = self.policy_threshold();
        if th == 0 || th > t.endorsing_peers {
            return Err(invalid(
                "policy.threshold",
                format!("must lie in 1..={}", t.endorsing_peers),
            ));
        }
        self.cutter.validate().map_err(|reason| invalid("cutter", reason))?;
        let rf = self.replication_factor();
        if rf == 0 || rf > t.brokers {
            return Err(invalid(
                "replication.replication_factor",
                format!("must lie in 1..={} (brokers)", t.brokers),
            ));
        }
        let mi = self.min_insync();
        if mi == 0 || mi > rf {
            return Err(invalid(
                "replication.min_insync",
                format!("must lie in 1..={rf} (replication_factor)"),
            ));
        }
        if self.replication.orderer_queue_capacity == 0 {
            return Err(invalid("replication.orderer_queue_capacity", "must be at least 1"));
        }
        let j = self.network.jitter_fraction;
        if !(0.0..1.0).contains(&j) {
            return Err(invalid("network.jitter_fraction", "must lie in [0, 1)"));
        }
        if self.timeouts.endorse_timeout_us == 0 {
            return Err(invalid("timeouts.endorse_timeout_us", "must be positive"));
        }
        if self.timeouts.broadcast_timeout_us == 0 {
            return Err(invalid("timeouts.broadcast_timeout_us", "must be positive"));
        }
        self.sizes.validate().map_err(|reason| invalid("sizes", reason))?;
        if self.run.duration_us == 0 {
            return Err(invalid("run.duration_us", "must be positive"));
        }
        let w = self.run.warmup_fraction;
        if !(0.0..1.0).contains(&w) {
            return Err(invalid("run.warmup_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}
