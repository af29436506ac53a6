//! Hash-chained block store and versioned world state, one instance per peer.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::{xxh3_64, Xxh3};

use crate::ordering::Envelope;
use crate::sim::SimTime;

/// 64-bit non-cryptographic digest (xxh3).
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Digest(pub u64);

impl Digest {
    /// `prev_hash` of block 0.
    pub const GENESIS_PREV: Digest = Digest(0);
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Position of the write that produced a value. Ordered lexicographically.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Version {
    pub height: u64,
    pub index: u32,
}

impl Version {
    pub const fn new(height: u64, index: u32) -> Self {
        Version { height, index }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.height, self.index)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountKind {
    Checking,
    Savings,
}

/// State key `cust/<id>/checking` or `cust/<id>/savings`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Key {
    pub customer: u32,
    pub kind: AccountKind,
}

impl Key {
    pub const fn checking(customer: u32) -> Self {
        Key {
            customer,
            kind: AccountKind::Checking,
        }
    }

    pub const fn savings(customer: u32) -> Self {
        Key {
            customer,
            kind: AccountKind::Savings,
        }
    }

    fn encode(&self, out: &mut [u8; 5]) {
        out[..4].copy_from_slice(&self.customer.to_le_bytes());
        out[4] = self.kind as u8;
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            AccountKind::Checking => "checking",
            AccountKind::Savings => "savings",
        };
        write!(f, "cust/{}/{}", self.customer, kind)
    }
}

/// Keys read during execution with the version observed (`None` = absent).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReadSet(pub Vec<(Key, Option<Version>)>);

/// Final values written by execution.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WriteSet(pub Vec<(Key, i64)>);

impl ReadSet {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn contains(&self, key: &Key) -> bool {
        self.0.iter().any(|(k, _)| k == key)
    }
}

impl WriteSet {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
}

/// Read-only state access, as seen by chaincode execution.
pub trait StateView {
    fn read_state(&self, key: &Key) -> Option<(i64, Version)>;
}

/// Versioned key-value store. The digest is an order-independent sum of
/// per-entry hashes, maintained incrementally.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorldState {
    entries: BTreeMap<Key, (i64, Version)>,
    digest: u64,
}

fn entry_hash(key: &Key, value: i64, version: Version) -> u64 {
    let mut buf = [0u8; 29];
    let mut k = [0u8; 5];
    key.encode(&mut k);
    buf[..5].copy_from_slice(&k);
    buf[5..13].copy_from_slice(&value.to_le_bytes());
    buf[13..21].copy_from_slice(&version.height.to_le_bytes());
    buf[21..25].copy_from_slice(&version.index.to_le_bytes());
    xxh3_64(&buf)
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn digest(&self) -> Digest {
        Digest(self.digest)
    }

    /// Digest recomputed from scratch; equals [`WorldState::digest`].
    pub fn recompute_digest(&self) -> Digest {
        Digest(
            self.entries
                .iter()
                .fold(0u64, |acc, (k, (v, ver))| acc.wrapping_add(entry_hash(k, *v, *ver))),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &(i64, Version))> {
        self.entries.iter()
    }

    /// Applies an already-validated write set; every written key takes `at`.
    pub fn apply_write_set(&mut self, ws: &WriteSet, at: Version) -> Digest {
        for (key, value) in &ws.0 {
            let prev = self.entries.insert(*key, (*value, at));
            if let Some((old, old_ver)) = prev {
                debug_assert!(old_ver <= at, "version regression on {key}");
                self.digest = self.digest.wrapping_sub(entry_hash(key, old, old_ver));
            }
            self.digest = self.digest.wrapping_add(entry_hash(key, *value, at));
        }
        self.digest()
    }
}

impl StateView for WorldState {
    fn read_state(&self, key: &Key) -> Option<(i64, Version)> {
        self.entries.get(key).copied()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutReason {
    /// Block 0, which loads the initial balances.
    Genesis,
    CountThreshold,
    SizeThreshold,
    Timeout,
}

impl CutReason {
    pub fn name(self) -> &'static str {
        match self {
            CutReason::Genesis => "genesis",
            CutReason::CountThreshold => "count_threshold",
            CutReason::SizeThreshold => "size_threshold",
            CutReason::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub txns: Vec<Arc<Envelope>>,
    pub cut_reason: CutReason,
    pub created_at: SimTime,
}

/// Digest over `(height, prev_hash, txn ids in order, cut_reason)`.
pub fn hash_block(block: &Block) -> Digest {
    let mut h = Xxh3::new();
    h.update(b"blk1");
    h.update(&block.height.to_le_bytes());
    h.update(&block.prev_hash.0.to_le_bytes());
    h.update(&(block.txns.len() as u64).to_le_bytes());
    for env in &block.txns {
        h.update(&env.txn_id.canonical_bytes());
    }
    h.update(&[block.cut_reason as u8]);
    Digest(h.digest())
}

/// Validation outcome recorded per transaction.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxFlag {
    Valid,
    PolicyViolation,
    MvccConflict,
}

impl TxFlag {
    pub fn name(self) -> &'static str {
        match self {
            TxFlag::Valid => "valid",
            TxFlag::PolicyViolation => "policy_violation",
            TxFlag::MvccConflict => "mvcc_conflict",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("block height {got} does not follow tip (expected {expected})")]
    HeightGap { expected: u64, got: u64 },
    #[error("block {height} prev_hash {got} does not match tip {expected}")]
    HashMismatch { height: u64, expected: Digest, got: Digest },
    #[error("block {height} carries no transactions")]
    EmptyBlock { height: u64 },
    #[error("block {height} has {flags} flags for {txns} transactions")]
    FlagCount { height: u64, flags: usize, txns: usize },
}

/// Snapshot of the chain after committing one height.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeightRecord {
    pub block_hash: Digest,
    pub state_digest: Digest,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    height: u64,
    cut_reason: &'a str,
    txns: Vec<String>,
    flags: Vec<&'a str>,
}

/// Block chain plus world state for one peer.
#[derive(Clone, Debug, Default)]
pub struct Ledger {
    blocks: Vec<Arc<Block>>,
    flags: Vec<Vec<TxFlag>>,
    history: Vec<HeightRecord>,
    state: WorldState,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of blocks stored; also the height expected next.
    pub fn next_height(&self) -> u64 {
        self.blocks.len() as u64
    }

    /// Height of the last stored block, if any.
    pub fn tip_height(&self) -> Option<u64> {
        self.next_height().checked_sub(1)
    }

    pub fn tip_hash(&self) -> Digest {
        self.history.last().map_or(Digest::GENESIS_PREV, |r| r.block_hash)
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut WorldState {
        &mut self.state
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    pub fn flags(&self, height: u64) -> Option<&[TxFlag]> {
        self.flags.get(height as usize).map(Vec::as_slice)
    }

    pub fn history(&self) -> &[HeightRecord] {
        &self.history
    }

    pub fn read_state(&self, key: &Key) -> Option<(i64, Version)> {
        self.state.read_state(key)
    }

    /// Checks that `block` extends the current tip.
    pub fn check_extends(&self, block: &Block) -> Result<(), ChainError> {
        let expected = self.next_height();
        if block.height != expected {
            return Err(ChainError::HeightGap {
                expected,
                got: block.height,
            });
        }
        let tip = self.tip_hash();
        if block.prev_hash != tip {
            return Err(ChainError::HashMismatch {
                height: block.height,
                expected: tip,
                got: block.prev_hash,
            });
        }
        if block.txns.is_empty() {
            return Err(ChainError::EmptyBlock { height: block.height });
        }
        Ok(())
    }

    /// Appends a block whose valid writes have already been applied to the
    /// state. Returns the new tip height.
    pub fn append_block(&mut self, block: Arc<Block>, flags: Vec<TxFlag>) -> Result<u64, ChainError> {
        self.check_extends(&block)?;
        if flags.len() != block.txns.len() {
            return Err(ChainError::FlagCount {
                height: block.height,
                flags: flags.len(),
                txns: block.txns.len(),
            });
        }
        self.history.push(HeightRecord {
            block_hash: hash_block(&block),
            state_digest: self.state.digest(),
        });
        self.flags.push(flags);
        self.blocks.push(block);
        Ok(self.next_height() - 1)
    }

    /// Writes one JSON object per block:
    /// `{"height", "cut_reason", "txns": [ids], "flags": [flags]}`.
    pub fn dump_trace<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (block, flags) in self.blocks.iter().zip(&self.flags) {
            let line = TraceLine {
                height: block.height,
                cut_reason: block.cut_reason.name(),
                txns: block.txns.iter().map(|e| e.txn_id.to_string()).collect(),
                flags: flags.iter().map(|f| f.name()).collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
