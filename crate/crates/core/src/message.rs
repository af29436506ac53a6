//! Wire messages exchanged between nodes, local timers, and the byte-size
//! model that drives serialization delay.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chaincode::Proposal;
use crate::endorser::{Endorsement, Refusal};
use crate::ids::TxnId;
use crate::ledger::{Block, TxFlag};
use crate::ordering::{Envelope, LogEntry, LogRecord};
use crate::sim::{Payload, SimTime};

/// Byte sizes used to cost messages on the wire.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MessageSizes {
    pub proposal: u32,
    pub endorsement_base: u32,
    pub per_rw_entry: u32,
    pub envelope_header: u32,
    pub block_header: u32,
    pub log_record_overhead: u32,
    pub log_cut_marker: u32,
    pub ack: u32,
    pub notice_base: u32,
    pub notice_per_txn: u32,
}

impl Default for MessageSizes {
    fn default() -> Self {
        MessageSizes {
            proposal: 256,
            endorsement_base: 320,
            per_rw_entry: 32,
            envelope_header: 128,
            block_header: 256,
            log_record_overhead: 64,
            log_cut_marker: 32,
            ack: 64,
            notice_base: 64,
            notice_per_txn: 16,
        }
    }
}

impl MessageSizes {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("proposal", self.proposal),
            ("endorsement_base", self.endorsement_base),
            ("envelope_header", self.envelope_header),
            ("block_header", self.block_header),
            ("log_record_overhead", self.log_record_overhead),
            ("log_cut_marker", self.log_cut_marker),
            ("ack", self.ack),
            ("notice_base", self.notice_base),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(format!("sizes.{name} must be positive")),
            None => Ok(()),
        }
    }

    pub fn endorsement(&self, e: &Endorsement) -> u32 {
        self.endorsement_base + self.per_rw_entry * e.rw_entries() as u32
    }

    pub fn envelope(&self, env: &Envelope) -> u32 {
        self.envelope_header + self.proposal + env.endorsements.iter().map(|e| self.endorsement(e)).sum::<u32>()
    }

    pub fn log_record(&self, rec: &LogRecord) -> u32 {
        self.log_record_overhead + rec.bytes as u32
    }

    pub fn block(&self, block: &Block) -> u32 {
        self.block_header + block.txns.iter().map(|e| self.envelope(e)).sum::<u32>()
    }

    pub fn log_entries(&self, entries: &[LogEntry]) -> u32 {
        entries
            .iter()
            .map(|e| match e {
                LogEntry::Record { env, .. } => self.log_record_overhead + self.envelope(env),
                LogEntry::Cut { .. } => self.log_cut_marker,
            })
            .sum()
    }

    pub fn notice(&self, txns: usize) -> u32 {
        self.notice_base + self.notice_per_txn * txns as u32
    }
}

/// Local timers. They never cross the network.
#[derive(Clone, Debug)]
pub enum Timer {
    /// Client: submit the next scheduled proposal.
    Submit,
    EndorseTimeout(u32),
    BroadcastTimeout(u32),
    /// Log leader: block-cut timeout for a batch.
    CutTimeout(u64),
    /// Peer: the block handed to validation is done.
    ValidateDone,
    /// Record orderer counters at the end of the measurement window.
    Snapshot,
}

/// Commit outcome for one of a client's transactions.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct CommitEntry {
    pub seq: u32,
    pub flag: TxFlag,
}

#[derive(Clone, Debug)]
pub enum Body {
    Proposal(Arc<Proposal>),
    Endorsement(Arc<Endorsement>),
    Refusal(Refusal),
    Envelope(Arc<Envelope>),
    /// Orderer to leader (`offset` is `None`) or leader to follower.
    LogAppend {
        offset: Option<u64>,
        record: LogRecord,
    },
    LogAck {
        broker: u32,
        offset: u64,
    },
    LogDeliver(Arc<Vec<LogEntry>>),
    BroadcastAck(TxnId),
    BlockDeliver(Arc<Block>),
    GossipBlock(Arc<Block>),
    CommitNotice {
        committed_at: SimTime,
        entries: Vec<CommitEntry>,
    },
    Timer(Timer),
    /// A received message whose CPU service time has elapsed.
    Serviced(Box<Body>),
}

/// A body plus its precomputed wire size.
#[derive(Clone, Debug)]
pub struct Message {
    pub body: Body,
    pub size: u32,
}

impl Message {
    pub fn timer(t: Timer) -> Self {
        Message {
            body: Body::Timer(t),
            size: 0,
        }
    }

    pub fn local(body: Body) -> Self {
        Message { body, size: 0 }
    }
}

impl Body {
    pub fn tag(&self) -> u8 {
        match self {
            Body::Proposal(_) => 1,
            Body::Endorsement(_) => 2,
            Body::Refusal(_) => 3,
            Body::Envelope(_) => 4,
            Body::LogAppend { .. } => 5,
            Body::LogAck { .. } => 6,
            Body::LogDeliver(_) => 7,
            Body::BroadcastAck(_) => 8,
            Body::BlockDeliver(_) => 9,
            Body::GossipBlock(_) => 10,
            Body::CommitNotice { .. } => 11,
            Body::Timer(_) => 12,
            Body::Serviced(inner) => 0x80 | inner.tag(),
        }
    }
}

impl Payload for Message {
    fn size_bytes(&self) -> u32 {
        self.size
    }

    fn tag(&self) -> u8 {
        self.body.tag()
    }
}
