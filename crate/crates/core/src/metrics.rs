//! Post-run aggregation of journeys and node counters into a [`RunReport`].
//!
//! Throughput counts valid commits whose commit time lies inside the
//! measurement window `[warmup, duration)`. Latency averages committed
//! journeys submitted inside the window. Status totals cover the whole run
//! so they always sum to the number of submissions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::committer::FlagCounts;
use crate::config::ExperimentConfig;
use crate::driver::{TxnJourney, TxnStatus};
use crate::ledger::{Block, CutReason, TxFlag};
use crate::pipeline::{EnqueueCounters, PeerEnd, Simulation};
use crate::sim::{NodeClass, SimTime, TraceSummary, Traffic};

/// Half-open measurement interval `[warmup, duration)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start_us: u64,
    pub end_us: u64,
}

impl Window {
    pub fn new(start: SimTime, end: SimTime) -> Self {
        Window {
            start_us: start.as_micros(),
            end_us: end.as_micros().max(start.as_micros()),
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let d = cfg.run.duration_us;
        let start = (d as f64 * cfg.run.warmup_fraction).round() as u64;
        Window::new(SimTime::from_micros(start.min(d)), SimTime::from_micros(d))
    }

    pub fn contains(&self, t: SimTime) -> bool {
        (self.start_us..self.end_us).contains(&t.as_micros())
    }

    pub fn secs(&self) -> f64 {
        (self.end_us - self.start_us) as f64 / 1e6
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub submitted: u64,
    pub committed: u64,
    pub invalid_committed: u64,
    pub dropped_endorsement: u64,
    pub dropped_broadcast: u64,
    pub in_flight: u64,
}

impl StatusCounts {
    pub fn add(&mut self, status: TxnStatus) {
        self.submitted += 1;
        match status {
            TxnStatus::Committed => self.committed += 1,
            TxnStatus::InvalidCommitted => self.invalid_committed += 1,
            TxnStatus::DroppedEndorsement => self.dropped_endorsement += 1,
            TxnStatus::DroppedBroadcast => self.dropped_broadcast += 1,
            TxnStatus::InFlight => self.in_flight += 1,
        }
    }

    pub fn settled_sum(&self) -> u64 {
        self.committed + self.invalid_committed + self.dropped_endorsement + self.dropped_broadcast + self.in_flight
    }
}

/// Commit latency over committed journeys in the window. `None` when no
/// journey qualifies. Percentiles use the nearest-rank method and are
/// reported in addition to the mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: u64,
    pub avg_s: Option<f64>,
    pub p50_s: Option<f64>,
    pub p95_s: Option<f64>,
}

impl LatencyStats {
    pub fn from_micros(mut us: Vec<u64>) -> Self {
        if us.is_empty() {
            return LatencyStats::default();
        }
        us.sort_unstable();
        let n = us.len();
        let sum: u128 = us.iter().map(|&v| u128::from(v)).sum();
        let rank = |q: f64| us[((q * n as f64).ceil() as usize).clamp(1, n) - 1] as f64 / 1e6;
        LatencyStats {
            samples: n as u64,
            avg_s: Some(sum as f64 / n as f64 / 1e6),
            p50_s: Some(rank(0.50)),
            p95_s: Some(rank(0.95)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    /// Blocks above genesis.
    pub count: u64,
    pub txns: u64,
    pub mean_txns: f64,
    /// Mean of `txns / max_txn_count`.
    pub mean_fill: f64,
    /// Blocks holding exactly `max_txn_count` transactions.
    pub full: u64,
    pub cut_reasons: BTreeMap<CutReason, u64>,
}

impl BlockStats {
    pub fn from_blocks<'a>(blocks: impl IntoIterator<Item = &'a Block>, max_txn_count: u32) -> Self {
        let mut s = BlockStats::default();
        for b in blocks.into_iter().filter(|b| b.height > 0) {
            s.count += 1;
            s.txns += b.txns.len() as u64;
            if b.txns.len() == max_txn_count as usize {
                s.full += 1;
            }
            *s.cut_reasons.entry(b.cut_reason).or_default() += 1;
        }
        if s.count > 0 {
            s.mean_txns = s.txns as f64 / s.count as f64;
            s.mean_fill = s.mean_txns / f64::from(max_txn_count.max(1));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTraffic {
    pub node: String,
    pub class: NodeClass,
    #[serde(flatten)]
    pub traffic: Traffic,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub agreed: bool,
    pub peers: Vec<PeerEnd>,
}

impl Agreement {
    pub fn from_peers(peers: Vec<PeerEnd>) -> Self {
        let agreed = peers.windows(2).all(|w| {
            (w[0].height, &w[0].tip_hash, &w[0].state_digest) == (w[1].height, &w[1].tip_hash, &w[1].state_digest)
        });
        Agreement { agreed, peers }
    }
}

/// Flattened experiment shape, repeated for quick reading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub endorsing_peers: u32,
    pub clients: u32,
    pub per_client_tps: f64,
    pub total_tps: f64,
    pub orderers: u32,
    pub brokers: u32,
    pub non_endorsing_peers: u32,
    pub policy_threshold: u32,
    pub replication_factor: u32,
    pub min_insync: u32,
    pub seed: u64,
    pub duration_us: u64,
}

impl ConfigEcho {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        let t = &cfg.topology;
        ConfigEcho {
            endorsing_peers: t.endorsing_peers,
            clients: t.clients,
            per_client_tps: cfg.per_client_tps(),
            total_tps: cfg.total_tps(),
            orderers: t.orderers,
            brokers: t.brokers,
            non_endorsing_peers: t.non_endorsing_peers,
            policy_threshold: cfg.policy_threshold(),
            replication_factor: cfg.replication_factor(),
            min_insync: cfg.min_insync(),
            seed: cfg.run.seed,
            duration_us: cfg.run.duration_us,
        }
    }
}

/// Everything besides journeys that feeds a report.
#[derive(Clone, Debug, Default)]
pub struct NodeCounters {
    pub config: ExperimentConfig,
    pub enqueue_window: Option<EnqueueCounters>,
    pub enqueue_final: EnqueueCounters,
    pub flags: FlagCounts,
    pub blocks: BlockStats,
    pub traffic: Vec<NodeTraffic>,
    pub agreement: Agreement,
    pub trace: Option<TraceSummary>,
    pub endorse_refusals: u64,
    pub log_unavailable: u64,
}

impl NodeCounters {
    /// Counters of a finished simulation. Block and flag statistics come
    /// from the first endorsing peer.
    pub fn of(sim: &Simulation) -> Self {
        let cfg = sim.config().clone();
        let peer0 = sim.committer(0);
        let blocks = BlockStats::from_blocks(
            peer0.ledger().blocks().iter().map(|b| b.as_ref()),
            cfg.cutter.max_txn_count,
        );
        NodeCounters {
            enqueue_window: sim.enqueue_at_window_end(),
            enqueue_final: sim.enqueue_final(),
            flags: peer0.counts(),
            blocks,
            traffic: sim
                .traffic()
                .into_iter()
                .map(|(node, class, traffic)| NodeTraffic { node, class, traffic })
                .collect(),
            agreement: Agreement::from_peers(sim.peer_ends()),
            trace: sim.trace().cloned(),
            endorse_refusals: sim.endorse_refusals(),
            log_unavailable: sim.log_unavailable(),
            config: cfg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub echo: ConfigEcho,
    pub config: ExperimentConfig,
    pub window: Window,
    pub offered_tps: f64,
    pub throughput_tps: f64,
    pub latency: LatencyStats,
    /// Journeys submitted inside the window.
    pub window_status: StatusCounts,
    /// Valid commits that happened inside the window.
    pub committed_in_window: u64,
    /// All journeys of the run.
    pub status: StatusCounts,
    /// Enqueue attempts over successes at the end of the window.
    pub r_window: Option<f64>,
    /// Same ratio after the drain.
    pub r_final: Option<f64>,
    pub enqueue_window: Option<EnqueueCounters>,
    pub enqueue_final: EnqueueCounters,
    pub flags: FlagCounts,
    pub blocks: BlockStats,
    pub traffic: Vec<NodeTraffic>,
    pub agreement: Agreement,
    pub trace: Option<TraceSummary>,
    pub endorse_refusals: u64,
    pub log_unavailable: u64,
}

pub fn aggregate(journeys: &[TxnJourney], counters: &NodeCounters, window: Window) -> RunReport {
    let mut status = StatusCounts::default();
    let mut window_status = StatusCounts::default();
    let mut latencies = Vec::new();
    let mut committed_in_window = 0u64;
    for j in journeys {
        status.add(j.status);
        if j.status == TxnStatus::Committed && j.commit.is_some_and(|t| window.contains(t)) {
            committed_in_window += 1;
        }
        if window.contains(j.submit) {
            window_status.add(j.status);
            if j.status == TxnStatus::Committed {
                latencies.extend(j.latency().map(|d| d.as_micros()));
            }
        }
    }
    let secs = window.secs();
    let throughput_tps = if secs > 0.0 {
        committed_in_window as f64 / secs
    } else {
        0.0
    };
    let cfg = &counters.config;
    RunReport {
        echo: ConfigEcho::of(cfg),
        config: cfg.clone(),
        window,
        offered_tps: cfg.total_tps(),
        throughput_tps,
        latency: LatencyStats::from_micros(latencies),
        window_status,
        committed_in_window,
        status,
        r_window: counters.enqueue_window.and_then(|c| c.ratio()),
        r_final: counters.enqueue_final.ratio(),
        enqueue_window: counters.enqueue_window,
        enqueue_final: counters.enqueue_final,
        flags: counters.flags,
        blocks: counters.blocks.clone(),
        traffic: counters.traffic.clone(),
        agreement: counters.agreement.clone(),
        trace: counters.trace.clone(),
        endorse_refusals: counters.endorse_refusals,
        log_unavailable: counters.log_unavailable,
    }
}

impl RunReport {
    pub fn of(sim: &Simulation) -> Self {
        let counters = NodeCounters::of(sim);
        aggregate(&sim.journeys(), &counters, Window::from_config(sim.config()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Valid plus invalid transactions recorded in blocks.
    pub fn block_txns_match_commits(&self) -> bool {
        self.blocks.txns == self.flags.total()
    }

    pub fn flag_count(&self, flag: TxFlag) -> u64 {
        match flag {
            TxFlag::Valid => self.flags.valid,
            TxFlag::PolicyViolation => self.flags.policy_violation,
            TxFlag::MvccConflict => self.flags.mvcc_conflict,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaincode::OpKind;
    use crate::ids::{ClientId, TxnId};
    use crate::sim::SimDuration;

    fn journey(seq: u32, submit_us: u64, latency_us: Option<u64>, status: TxnStatus) -> TxnJourney {
        let submit = SimTime::from_micros(submit_us);
        TxnJourney {
            txn_id: TxnId::new(ClientId(0), seq),
            client: ClientId(0),
            op: OpKind::SendPayment,
            submit,
            endorsed: None,
            bcast_ack: None,
            commit: latency_us.map(|l| submit + SimDuration::from_micros(l)),
            status,
        }
    }

    fn window(secs: u64) -> Window {
        Window::new(SimTime::ZERO, SimTime::from_micros(secs * 1_000_000))
    }

    #[test]
    fn three_thousand_commits_in_ten_seconds_is_300_tps() {
        let js: Vec<_> = (0..3000)
            .map(|i| journey(i, u64::from(i) * 3_300, Some(50_000), TxnStatus::Committed))
            .collect();
        let r = aggregate(&js, &NodeCounters::default(), window(10));
        assert_eq!(r.throughput_tps, 300.0);
        assert_eq!(r.latency.avg_s, Some(0.05));
    }

    #[test]
    fn no_submissions_gives_zero_and_undefined_latency() {
        let r = aggregate(&[], &NodeCounters::default(), window(10));
        assert_eq!(r.throughput_tps, 0.0);
        assert_eq!(r.status, StatusCounts::default());
        assert_eq!(r.latency, LatencyStats::default());
        assert!(r.r_final.is_none());
        let json = r.to_json_pretty();
        assert!(json.contains("\"avg_s\": null"));
    }

    #[test]
    fn latencies_one_two_three_average_two() {
        let js = [
            journey(0, 0, Some(1_000_000), TxnStatus::Committed),
            journey(1, 10, Some(2_000_000), TxnStatus::Committed),
            journey(2, 20, Some(3_000_000), TxnStatus::Committed),
        ];
        let r = aggregate(&js, &NodeCounters::default(), window(10));
        assert_eq!(r.latency.avg_s, Some(2.0));
        assert_eq!(r.latency.p50_s, Some(2.0));
        assert_eq!(r.latency.p95_s, Some(3.0));
    }

    #[test]
    fn only_valid_commits_in_window_count() {
        let js = [
            journey(0, 500_000, Some(10), TxnStatus::Committed),
            journey(5, 900_000, Some(200_000), TxnStatus::Committed),
            journey(1, 1_500_000, Some(10), TxnStatus::Committed),
            journey(2, 1_600_000, Some(10), TxnStatus::InvalidCommitted),
            journey(3, 1_700_000, None, TxnStatus::DroppedEndorsement),
            journey(4, 2_000_000, Some(10), TxnStatus::Committed),
        ];
        let w = Window::new(SimTime::from_micros(1_000_000), SimTime::from_micros(2_000_000));
        let r = aggregate(&js, &NodeCounters::default(), w);
        assert_eq!(r.throughput_tps, 2.0);
        assert_eq!(r.committed_in_window, 2);
        assert_eq!(r.window_status.submitted, 3);
        assert_eq!(r.status.submitted, 6);
        assert_eq!(r.status.settled_sum(), 6);
    }

    #[test]
    fn warmup_window_follows_config() {
        let mut cfg = ExperimentConfig::default();
        cfg.run.duration_us = 30_000_000;
        cfg.run.warmup_fraction = 0.1;
        let w = Window::from_config(&cfg);
        assert_eq!((w.start_us, w.end_us), (3_000_000, 30_000_000));
        assert_eq!(w.secs(), 27.0);
    }

    #[test]
    fn ratio_is_undefined_without_successes() {
        let c = EnqueueCounters {
            attempts: 4,
            successes: 0,
            refusals: 4,
        };
        assert_eq!(c.ratio(), None);
        let c = EnqueueCounters {
            attempts: 6,
            successes: 4,
            refusals: 2,
        };
        assert_eq!(c.ratio(), Some(1.5));
    }
}
