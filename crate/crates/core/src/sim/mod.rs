//! Deterministic discrete-event engine.
//!
//! All node state machines run inside [`World::dispatch`]; the engine owns the
//! clock, the event queue, the single seeded jitter generator and the
//! latency-modeled [`Network`]. Events fire in strictly increasing
//! `(fire_time, seq)` order, so a run is a pure function of its configuration
//! and seed.

mod net;
mod time;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use net::Network;
pub use net::{LatencyModel, LinkCost, NodeClass, NodeId, Traffic};
pub use time::{SimDuration, SimTime};

/// What the engine needs to know about a payload.
pub trait Payload {
    /// Wire size; zero only for local timers.
    fn size_bytes(&self) -> u32;
    /// Small stable discriminant folded into the dispatch digest.
    fn tag(&self) -> u8;
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("unknown target node {0}")]
    UnknownTarget(NodeId),
    #[error("node {0} attempted to send to itself")]
    Loopback(NodeId),
    #[error("network message of zero size from {0}")]
    EmptyMessage(NodeId),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId(pub u64);

#[derive(Debug)]
pub struct Event<P> {
    pub fire_time: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub payload: P,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    // BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_time, other.0.seq).cmp(&(self.0.fire_time, self.0.seq))
    }
}

/// Receives every dispatched event.
pub trait World<P> {
    fn dispatch(&mut self, event: Event<P>, engine: &mut Engine<P>);
}

/// Result of [`Engine::run_until_quiescent`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub events: u64,
    pub final_time: SimTime,
    /// Rolling hash over `(fire_time, seq, target, tag)` of every dispatch.
    pub digest: u64,
    pub truncated: bool,
}

pub struct Engine<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    rng: ChaCha8Rng,
    net: Network,
    dispatched: u64,
    digest: u64,
}

const DIGEST_SEED: u64 = 0x6a09_e667_f3bc_c908;

impl<P: Payload> Engine<P> {
    pub fn new(seed: u64, model: LatencyModel, classes: Vec<NodeClass>) -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            net: Network::new(model, classes),
            dispatched: 0,
            digest: DIGEST_SEED,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn node_count(&self) -> usize {
        self.net.len()
    }

    pub fn class_of(&self, node: NodeId) -> NodeClass {
        self.net.class(node)
    }

    pub fn latency_model(&self) -> &LatencyModel {
        self.net.model()
    }

    pub fn traffic(&self) -> &[Traffic] {
        self.net.traffic()
    }

    fn check_target(&self, target: NodeId) -> Result<(), SimError> {
        if (target.0 as usize) < self.net.len() {
            Ok(())
        } else {
            Err(SimError::UnknownTarget(target))
        }
    }

    fn enqueue(&mut self, fire_time: SimTime, target: NodeId, payload: P) -> EventId {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event {
            fire_time,
            seq,
            target,
            payload,
        }));
        EventId(seq)
    }

    /// Enqueues `payload` for `target` at `now + delay`.
    pub fn schedule(&mut self, target: NodeId, payload: P, delay: SimDuration) -> Result<EventId, SimError> {
        self.check_target(target)?;
        Ok(self.enqueue(self.now + delay, target, payload))
    }

    /// Enqueues `payload` for `target` at an absolute instant not in the past.
    pub fn schedule_at(&mut self, target: NodeId, payload: P, at: SimTime) -> Result<EventId, SimError> {
        self.check_target(target)?;
        Ok(self.enqueue(at.max(self.now), target, payload))
    }

    /// Sends a network message; returns its delivery instant.
    pub fn send(&mut self, src: NodeId, dst: NodeId, msg: P) -> Result<SimTime, SimError> {
        self.check_target(src)?;
        self.check_target(dst)?;
        if src == dst {
            return Err(SimError::Loopback(src));
        }
        let bytes = msg.size_bytes();
        if bytes == 0 {
            return Err(SimError::EmptyMessage(src));
        }
        let at = self.net.plan(self.now, src, dst, bytes, &mut self.rng);
        self.enqueue(at, dst, msg);
        Ok(at)
    }

    /// Dispatches events until the queue drains or the next event lies past
    /// `time_limit`.
    pub fn run_until_quiescent<W: World<P>>(&mut self, world: &mut W, time_limit: SimTime) -> TraceSummary {
        let mut truncated = false;
        while let Some(head) = self.queue.peek() {
            if head.0.fire_time > time_limit {
                truncated = true;
                break;
            }
            let Queued(event) = self.queue.pop().expect("peeked");
            debug_assert!(event.fire_time >= self.now, "time went backwards");
            self.now = event.fire_time;
            self.dispatched += 1;
            self.fold_digest(&event);
            world.dispatch(event, self);
        }
        TraceSummary {
            events: self.dispatched,
            final_time: self.now,
            digest: self.digest,
            truncated,
        }
    }

    fn fold_digest(&mut self, event: &Event<P>) {
        let mut buf = [0u8; 29];
        buf[..8].copy_from_slice(&self.digest.to_le_bytes());
        buf[8..16].copy_from_slice(&event.fire_time.as_micros().to_le_bytes());
        buf[16..24].copy_from_slice(&event.seq.to_le_bytes());
        buf[24..28].copy_from_slice(&event.target.0.to_le_bytes());
        buf[28] = event.payload.tag();
        self.digest = xxhash_rust::xxh3::xxh3_64(&buf);
    }
}
