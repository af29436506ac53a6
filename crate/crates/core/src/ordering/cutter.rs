use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::ledger::CutReason;
use crate::sim::{SimDuration, SimTime};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockCutterConfig {
    pub max_txn_count: u32,
    pub timeout_us: u64,
    pub max_block_bytes: u64,
}

impl Default for BlockCutterConfig {
    fn default() -> Self {
        BlockCutterConfig {
            max_txn_count: 100,
            timeout_us: 2_000_000,
            max_block_bytes: 10 * 1024 * 1024,
        }
    }
}

impl BlockCutterConfig {
    pub fn timeout(&self) -> SimDuration {
        SimDuration::from_micros(self.timeout_us)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_txn_count == 0 {
            return Err("cutter.max_txn_count must be positive".into());
        }
        if self.timeout_us == 0 {
            return Err("cutter.timeout_us must be positive".into());
        }
        if self.max_block_bytes == 0 {
            return Err("cutter.max_block_bytes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pending<T> {
    pub item: T,
    pub bytes: u64,
    pub arrived: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch<T> {
    pub items: Vec<T>,
    pub reason: CutReason,
}

/// Decides whether the pending queue yields a block at `now`.
///
/// Conditions are checked count first, then size, then the age of the oldest
/// pending entry. A count cut takes exactly `max_txn_count` entries; size and
/// timeout cuts take the shortest prefix that trips the condition (the whole
/// queue for a timeout).
pub fn cut_block<T>(pending: &mut VecDeque<Pending<T>>, cfg: &BlockCutterConfig, now: SimTime) -> Option<Batch<T>> {
    let oldest = pending.front()?.arrived;
    let max = cfg.max_txn_count as usize;

    let mut bytes = 0u64;
    let mut size_cut = None;
    for (i, p) in pending.iter().enumerate().take(max) {
        bytes += p.bytes;
        if bytes >= cfg.max_block_bytes {
            size_cut = Some(i + 1);
            break;
        }
    }

    let (take, reason) = if pending.len() >= max && size_cut.is_none_or(|n| n == max) {
        (max, CutReason::CountThreshold)
    } else if let Some(n) = size_cut {
        (n, CutReason::SizeThreshold)
    } else if now.saturating_since(oldest) >= cfg.timeout() {
        (pending.len(), CutReason::Timeout)
    } else {
        return None;
    };
    Some(Batch {
        items: pending.drain(..take).map(|p| p.item).collect(),
        reason,
    })
}

/// Timer request emitted when a new batch starts.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TimerRequest {
    pub batch: u64,
    pub at: SimTime,
}

/// Stateful cutter fed one record at a time.
#[derive(Clone, Debug)]
pub struct BlockCutter<T> {
    cfg: BlockCutterConfig,
    pending: VecDeque<Pending<T>>,
    batch: u64,
}

impl<T> BlockCutter<T> {
    pub fn new(cfg: BlockCutterConfig) -> Self {
        BlockCutter {
            cfg,
            pending: VecDeque::new(),
            batch: 0,
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn config(&self) -> &BlockCutterConfig {
        &self.cfg
    }

    fn after_cut(&mut self, out: &Option<Batch<T>>) -> Option<TimerRequest> {
        if out.is_some() {
            self.batch += 1;
        }
        // Leftovers (size cut) start a new batch immediately.
        self.pending.front().map(|p| TimerRequest {
            batch: self.batch,
            at: p.arrived + self.cfg.timeout(),
        })
    }

    /// Adds one record; may cut, and may ask for a timeout timer.
    pub fn push(&mut self, item: T, bytes: u64, now: SimTime) -> (Option<Batch<T>>, Option<TimerRequest>) {
        let was_empty = self.pending.is_empty();
        self.pending.push_back(Pending {
            item,
            bytes,
            arrived: now,
        });
        let out = cut_block(&mut self.pending, &self.cfg, now);
        let timer = if out.is_some() {
            self.after_cut(&out)
        } else if was_empty {
            Some(TimerRequest {
                batch: self.batch,
                at: now + self.cfg.timeout(),
            })
        } else {
            None
        };
        (out, timer)
    }

    /// Handles a timer armed for `batch`; stale timers are ignored.
    pub fn on_timeout(&mut self, batch: u64, now: SimTime) -> (Option<Batch<T>>, Option<TimerRequest>) {
        if batch != self.batch {
            return (None, None);
        }
        let out = cut_block(&mut self.pending, &self.cfg, now);
        if out.is_none() {
            return (None, None);
        }
        let timer = self.after_cut(&out);
        (out, timer)
    }
}
