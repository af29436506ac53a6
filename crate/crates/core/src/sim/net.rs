use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::time::{SimDuration, SimTime};

/// Node roles that the latency model distinguishes between.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Client,
    Peer,
    Orderer,
    Broker,
}

impl NodeClass {
    pub const ALL: [NodeClass; 4] = [
        NodeClass::Client,
        NodeClass::Peer,
        NodeClass::Orderer,
        NodeClass::Broker,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeClass::Client => "client",
            NodeClass::Peer => "peer",
            NodeClass::Orderer => "orderer",
            NodeClass::Broker => "broker",
        }
    }

    pub fn parse(s: &str) -> Option<NodeClass> {
        NodeClass::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for NodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense index of a node in the simulated topology.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Cost of one directed link class: propagation plus serialization.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct LinkCost {
    pub base: SimDuration,
    /// Nanoseconds of sender egress time per byte.
    pub per_byte_ns: u64,
}

impl LinkCost {
    /// Serialization time for `bytes`, rounded up to whole microseconds.
    pub fn transmission(&self, bytes: u32) -> SimDuration {
        let ns = u64::from(bytes) * self.per_byte_ns;
        SimDuration::from_micros(ns.div_ceil(1_000))
    }
}

/// Per-class-pair latency model. Pairs are symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyModel {
    costs: [[LinkCost; 4]; 4],
    jitter_fraction: f64,
}

impl LatencyModel {
    pub fn uniform(base: SimDuration, per_byte_ns: u64, jitter_fraction: f64) -> Self {
        assert!(
            (0.0..1.0).contains(&jitter_fraction),
            "jitter_fraction must lie in [0, 1)"
        );
        let cost = LinkCost { base, per_byte_ns };
        LatencyModel {
            costs: [[cost; 4]; 4],
            jitter_fraction,
        }
    }

    pub fn with_pair(mut self, a: NodeClass, b: NodeClass, cost: LinkCost) -> Self {
        self.costs[a.index()][b.index()] = cost;
        self.costs[b.index()][a.index()] = cost;
        self
    }

    pub fn link(&self, src: NodeClass, dst: NodeClass) -> LinkCost {
        self.costs[src.index()][dst.index()]
    }

    pub fn jitter_fraction(&self) -> f64 {
        self.jitter_fraction
    }

    /// Jitter-free delivery delay on an idle link.
    pub fn nominal_delay(&self, src: NodeClass, dst: NodeClass, bytes: u32) -> SimDuration {
        let link = self.link(src, dst);
        link.base + link.transmission(bytes)
    }
}

/// Message and byte counters for one node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub msgs_sent: u64,
    pub bytes_sent: u64,
    pub msgs_recv: u64,
    pub bytes_recv: u64,
}

/// The lossless message fabric. Each node owns one FIFO egress interface;
/// every directed link delivers in send order.
#[derive(Debug)]
pub(crate) struct Network {
    model: LatencyModel,
    classes: Vec<NodeClass>,
    egress_free: Vec<SimTime>,
    link_last: HashMap<(NodeId, NodeId), SimTime>,
    traffic: Vec<Traffic>,
}

impl Network {
    pub(crate) fn new(model: LatencyModel, classes: Vec<NodeClass>) -> Self {
        let n = classes.len();
        Network {
            model,
            classes,
            egress_free: vec![SimTime::ZERO; n],
            link_last: HashMap::new(),
            traffic: vec![Traffic::default(); n],
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.classes.len()
    }

    pub(crate) fn class(&self, node: NodeId) -> NodeClass {
        self.classes[node.0 as usize]
    }

    pub(crate) fn model(&self) -> &LatencyModel {
        &self.model
    }

    pub(crate) fn traffic(&self) -> &[Traffic] {
        &self.traffic
    }

    /// Reserves the sender's egress and returns the delivery instant.
    pub(crate) fn plan<R: Rng>(&mut self, now: SimTime, src: NodeId, dst: NodeId, bytes: u32, rng: &mut R) -> SimTime {
        let link = self.model.link(self.class(src), self.class(dst));
        let egress = &mut self.egress_free[src.0 as usize];
        let start = now.max(*egress);
        let sent = start + link.transmission(bytes);
        *egress = sent;

        let mut delay = link.base;
        if self.model.jitter_fraction > 0.0 && link.base.as_micros() > 0 {
            let u: f64 = rng.random();
            let extra = (link.base.as_micros() as f64 * self.model.jitter_fraction * u) as u64;
            delay = delay + SimDuration::from_micros(extra);
        }
        let mut arrival = sent + delay;
        let last = self.link_last.entry((src, dst)).or_insert(SimTime::ZERO);
        arrival = arrival.max(*last);
        *last = arrival;

        let t = &mut self.traffic[src.0 as usize];
        t.msgs_sent += 1;
        t.bytes_sent += u64::from(bytes);
        let r = &mut self.traffic[dst.0 as usize];
        r.msgs_recv += 1;
        r.bytes_recv += u64::from(bytes);
        arrival
    }
}
