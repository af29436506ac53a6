use std::collections::VecDeque;
use std::sync::Arc;

use crate::ids::{ClientId, TxnId};
use crate::ledger::{hash_block, Block, CutReason, Digest};
use crate::sim::SimTime;

use super::cutter::{BlockCutter, BlockCutterConfig, TimerRequest};
use super::log::{BrokerIndex, LogError, ReplicatedLog};
use super::Envelope;

/// A log record: the envelope plus the orderer that received it.
#[derive(Clone, Debug)]
pub struct LogRecord {
    pub origin: u32,
    pub env: Arc<Envelope>,
    pub bytes: u64,
}

/// Entry streamed from the log leader to every orderer, in log order.
#[derive(Clone, Debug)]
pub enum LogEntry {
    Record {
        offset: u64,
        origin: u32,
        env: Arc<Envelope>,
    },
    /// The next `count` records form one block.
    Cut { reason: CutReason, count: u32, at: SimTime },
}

/// One cut decision, kept for diagnostics.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct CutStat {
    pub reason: CutReason,
    pub count: u32,
    /// Commit time of the oldest record in the block.
    pub oldest: SimTime,
    pub at: SimTime,
}

#[derive(Clone, Debug, Default)]
pub struct LeaderOutput {
    /// Offset assigned by an append.
    pub offset: Option<u64>,
    /// Followers that must receive a copy of `offset`.
    pub followers: Vec<BrokerIndex>,
    pub deliver: Vec<LogEntry>,
    pub timers: Vec<TimerRequest>,
}

/// Log leader: owns the replicated log and cuts blocks over its committed
/// prefix.
#[derive(Clone, Debug)]
pub struct LeaderState {
    log: ReplicatedLog<LogRecord>,
    cutter: BlockCutter<SimTime>,
    cuts: Vec<CutStat>,
}

impl LeaderState {
    pub fn new(log: ReplicatedLog<LogRecord>, cutter: BlockCutterConfig) -> Self {
        LeaderState {
            log,
            cutter: BlockCutter::new(cutter),
            cuts: Vec::new(),
        }
    }

    pub fn log(&self) -> &ReplicatedLog<LogRecord> {
        &self.log
    }

    pub fn record(&self, offset: u64) -> Option<&LogRecord> {
        self.log.record(offset)
    }

    pub fn cuts(&self) -> &[CutStat] {
        &self.cuts
    }

    pub fn pending_in_cutter(&self) -> usize {
        self.cutter.pending_len()
    }

    pub fn append(&mut self, rec: LogRecord, now: SimTime) -> Result<LeaderOutput, LogError> {
        let appended = self.log.append(rec)?;
        let mut out = LeaderOutput {
            offset: Some(appended.offset),
            followers: appended.followers,
            ..Default::default()
        };
        self.commit(appended.committed, now, &mut out);
        Ok(out)
    }

    pub fn ack(&mut self, broker: BrokerIndex, offset: u64, now: SimTime) -> LeaderOutput {
        let committed = self.log.ack(broker, offset);
        let mut out = LeaderOutput::default();
        self.commit(committed, now, &mut out);
        out
    }

    pub fn on_cut_timer(&mut self, batch: u64, now: SimTime) -> LeaderOutput {
        let mut out = LeaderOutput::default();
        let (cut, timer) = self.cutter.on_timeout(batch, now);
        if let Some(b) = cut {
            self.emit_cut(b.items, b.reason, now, &mut out);
        }
        out.timers.extend(timer);
        out
    }

    fn commit(&mut self, offsets: Vec<u64>, now: SimTime, out: &mut LeaderOutput) {
        for offset in offsets {
            let rec = self.log.record(offset).expect("committed offset exists");
            let (origin, env, bytes) = (rec.origin, rec.env.clone(), rec.bytes);
            out.deliver.push(LogEntry::Record { offset, origin, env });
            let (cut, timer) = self.cutter.push(now, bytes, now);
            if let Some(b) = cut {
                self.emit_cut(b.items, b.reason, now, out);
            }
            out.timers.extend(timer);
        }
    }

    fn emit_cut(&mut self, arrivals: Vec<SimTime>, reason: CutReason, now: SimTime, out: &mut LeaderOutput) {
        let count = arrivals.len() as u32;
        self.cuts.push(CutStat {
            reason,
            count,
            oldest: arrivals[0],
            at: now,
        });
        out.deliver.push(LogEntry::Cut { reason, count, at: now });
    }
}

/// Result of offering an envelope to an orderer.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Broadcast {
    Forward,
    Refused,
}

#[derive(Clone, Debug, Default)]
pub struct OrdererOutput {
    /// Clients whose envelopes, received here, are now committed.
    pub acks: Vec<(ClientId, TxnId)>,
    /// Blocks this orderer must deliver to the endorsing peers.
    pub fan_out: Vec<Arc<Block>>,
    /// Blocks built, designated or not.
    pub built: u32,
}

/// Orderer front-end: proxies envelopes into the log and rebuilds the chain
/// from the leader's stream.
#[derive(Clone, Debug)]
pub struct OrdererState {
    index: u32,
    orderers: u32,
    capacity: usize,
    outstanding: usize,
    attempts: u64,
    successes: u64,
    refusals: u64,
    pending: VecDeque<Arc<Envelope>>,
    next_offset: u64,
    next_height: u64,
    prev_hash: Digest,
}

impl OrdererState {
    /// `tip` is the hash of the block preceding `first_height`.
    pub fn new(index: u32, orderers: u32, capacity: usize, first_height: u64, tip: Digest) -> Self {
        assert!(index < orderers);
        OrdererState {
            index,
            orderers,
            capacity,
            outstanding: 0,
            attempts: 0,
            successes: 0,
            refusals: 0,
            pending: VecDeque::new(),
            next_offset: 0,
            next_height: first_height,
            prev_hash: tip,
        }
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    pub fn successes(&self) -> u64 {
        self.successes
    }

    pub fn refusals(&self) -> u64 {
        self.refusals
    }

    /// Envelopes accepted here and not yet committed.
    pub fn outstanding(&self) -> usize {
        self.outstanding
    }

    pub fn next_height(&self) -> u64 {
        self.next_height
    }

    pub fn tip_hash(&self) -> Digest {
        self.prev_hash
    }

    pub fn is_designated(&self, height: u64) -> bool {
        height % self.orderers as u64 == self.index as u64
    }

    /// Counts the attempt; refuses when the input queue is full.
    pub fn broadcast(&mut self) -> Broadcast {
        self.attempts += 1;
        if self.outstanding >= self.capacity {
            self.refusals += 1;
            Broadcast::Refused
        } else {
            self.outstanding += 1;
            Broadcast::Forward
        }
    }

    pub fn on_log_entries(&mut self, entries: &[LogEntry]) -> OrdererOutput {
        let mut out = OrdererOutput::default();
        for entry in entries {
            match entry {
                LogEntry::Record { offset, origin, env } => {
                    assert_eq!(*offset, self.next_offset, "log stream gap at orderer {}", self.index);
                    self.next_offset += 1;
                    self.pending.push_back(env.clone());
                    if *origin == self.index {
                        self.outstanding -= 1;
                        self.successes += 1;
                        out.acks.push((env.client, env.txn_id));
                    }
                }
                LogEntry::Cut { reason, count, at } => {
                    let block = Arc::new(Block {
                        height: self.next_height,
                        prev_hash: self.prev_hash,
                        txns: self.pending.drain(..*count as usize).collect(),
                        cut_reason: *reason,
                        created_at: *at,
                    });
                    self.prev_hash = hash_block(&block);
                    self.next_height += 1;
                    out.built += 1;
                    if self.is_designated(block.height) {
                        out.fan_out.push(block);
                    }
                }
            }
        }
        out
    }
}
