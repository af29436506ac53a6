//! Validation and commit on every peer: endorsement-policy check, MVCC
//! read-version check against the running in-block state, commit of valid
//! writes only, and in-order application of blocks that may arrive out of
//! order (gossip).

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::endorser::{policy_satisfied, EndorsementPolicy};
use crate::ids::{PeerId, TxnId};
use crate::ledger::{
    Block, ChainError, CutReason, Digest, Key, Ledger, StateView, TxFlag, Version, WorldState, WriteSet,
};
use crate::ordering::Envelope;
use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationResult {
    pub txn_id: TxnId,
    pub flag: TxFlag,
    /// `(key, expected, found)` for every read that was checked.
    pub checked_versions: Vec<(Key, Option<Version>, Option<Version>)>,
    /// Index of the endorsement whose write set is applied when valid.
    pub witness: Option<usize>,
}

/// Validates a block in order. Transaction `i` sees the writes of the valid
/// transactions before it in the same block.
pub fn validate_block(block: &Block, policy: &EndorsementPolicy, state: &WorldState) -> Vec<ValidationResult> {
    let mut overlay: HashMap<Key, Version> = HashMap::new();
    let mut results = Vec::with_capacity(block.txns.len());
    for (i, env) in block.txns.iter().enumerate() {
        let witness = policy_witness(env, policy);
        let Some(w) = witness else {
            results.push(ValidationResult {
                txn_id: env.txn_id,
                flag: TxFlag::PolicyViolation,
                checked_versions: Vec::new(),
                witness: None,
            });
            continue;
        };
        let endorsement = &env.endorsements[w];
        let mut checked = Vec::with_capacity(endorsement.read_set.len());
        let mut conflict = false;
        for &(key, expected) in &endorsement.read_set.0 {
            let found = overlay
                .get(&key)
                .copied()
                .or_else(|| state.read_state(&key).map(|(_, v)| v));
            conflict |= found != expected;
            checked.push((key, expected, found));
        }
        let flag = if conflict {
            TxFlag::MvccConflict
        } else {
            let at = Version::new(block.height, i as u32);
            for &(key, _) in &endorsement.write_set.0 {
                overlay.insert(key, at);
            }
            TxFlag::Valid
        };
        results.push(ValidationResult {
            txn_id: env.txn_id,
            flag,
            checked_versions: checked,
            witness: Some(w),
        });
    }
    results
}

fn policy_witness(env: &Envelope, policy: &EndorsementPolicy) -> Option<usize> {
    if env.endorsements.iter().any(|e| e.txn_id != env.txn_id) {
        return None;
    }
    match policy_satisfied(policy, &env.endorsements) {
        Ok(check) if check.satisfied => check.witnesses.first().copied(),
        _ => None,
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagCounts {
    pub valid: u64,
    pub policy_violation: u64,
    pub mvcc_conflict: u64,
}

impl FlagCounts {
    pub fn add(&mut self, flag: TxFlag) {
        match flag {
            TxFlag::Valid => self.valid += 1,
            TxFlag::PolicyViolation => self.policy_violation += 1,
            TxFlag::MvccConflict => self.mvcc_conflict += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.valid + self.policy_violation + self.mvcc_conflict
    }

    pub fn merge(&mut self, other: &FlagCounts) {
        self.valid += other.valid;
        self.policy_violation += other.policy_violation;
        self.mvcc_conflict += other.mvcc_conflict;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitSummary {
    pub height: u64,
    pub state_digest: Digest,
    pub counts: FlagCounts,
}

/// Applies the valid write sets in block order and appends the block.
pub fn commit_block(
    ledger: &mut Ledger,
    block: Arc<Block>,
    results: &[ValidationResult],
) -> Result<CommitSummary, ChainError> {
    ledger.check_extends(&block)?;
    let mut counts = FlagCounts::default();
    for (i, (env, r)) in block.txns.iter().zip(results).enumerate() {
        counts.add(r.flag);
        if r.flag == TxFlag::Valid {
            let ws = &env.endorsements[r.witness.expect("valid txn has a witness")].write_set;
            ledger
                .state_mut()
                .apply_write_set(ws, Version::new(block.height, i as u32));
        }
    }
    let flags = results.iter().map(|r| r.flag).collect();
    let height = ledger.append_block(block, flags)?;
    Ok(CommitSummary {
        height,
        state_digest: ledger.state().digest(),
        counts,
    })
}

/// Block 0: a single system transaction that loads the initial balances.
pub fn genesis_block() -> Arc<Block> {
    Arc::new(Block {
        height: 0,
        prev_hash: Digest::GENESIS_PREV,
        txns: vec![Arc::new(Envelope::bare(TxnId::GENESIS))],
        cut_reason: CutReason::Genesis,
        created_at: SimTime::ZERO,
    })
}

/// Endorsing peer that non-endorsing peer `j` pulls its blocks from.
pub fn gossip_anchor(non_endorsing: u32, endorsing: u32) -> u32 {
    non_endorsing % endorsing
}

/// Non-endorsing peers anchored on endorsing peer `anchor`.
pub fn gossip_targets(anchor: u32, endorsing: u32, non_endorsing: u32) -> Vec<u32> {
    (0..non_endorsing)
        .filter(|&j| gossip_anchor(j, endorsing) == anchor)
        .collect()
}

/// A block that was validated and committed.
#[derive(Clone, Debug)]
pub struct Committed {
    pub block: Arc<Block>,
    pub flags: Vec<TxFlag>,
    pub summary: CommitSummary,
}

/// A peer's ledger plus its reorder buffer.
#[derive(Clone, Debug)]
pub struct Committer {
    peer: PeerId,
    policy: Arc<EndorsementPolicy>,
    ledger: Ledger,
    buffer: BTreeMap<u64, Arc<Block>>,
    in_progress: Option<Arc<Block>>,
    counts: FlagCounts,
    duplicates: u64,
}

impl Committer {
    /// Installs the genesis block with `initial` writes at version (0, 0).
    pub fn new(peer: PeerId, policy: Arc<EndorsementPolicy>, genesis: Arc<Block>, initial: &WriteSet) -> Self {
        let mut ledger = Ledger::new();
        ledger.state_mut().apply_write_set(initial, Version::new(0, 0));
        let n = genesis.txns.len();
        ledger
            .append_block(genesis, vec![TxFlag::Valid; n])
            .expect("genesis extends an empty ledger");
        Committer {
            peer,
            policy,
            ledger,
            buffer: BTreeMap::new(),
            in_progress: None,
            counts: FlagCounts::default(),
            duplicates: 0,
        }
    }

    pub fn peer(&self) -> PeerId {
        self.peer
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn state(&self) -> &WorldState {
        self.ledger.state()
    }

    pub fn counts(&self) -> FlagCounts {
        self.counts
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_busy(&self) -> bool {
        self.in_progress.is_some()
    }

    /// Buffers a block. Returns false for a height already held or committed.
    pub fn receive(&mut self, block: Arc<Block>) -> bool {
        let h = block.height;
        let in_progress = self.in_progress.as_ref().is_some_and(|b| b.height == h);
        if h < self.ledger.next_height() || in_progress || self.buffer.contains_key(&h) {
            self.duplicates += 1;
            return false;
        }
        self.buffer.insert(h, block);
        true
    }

    /// Takes the next block in height order, if present and nothing else is
    /// being validated.
    pub fn take_ready(&mut self) -> Option<Arc<Block>> {
        if self.in_progress.is_some() {
            return None;
        }
        let block = self.buffer.remove(&self.ledger.next_height())?;
        self.in_progress = Some(block.clone());
        Some(block)
    }

    /// Validates and commits the block handed out by `take_ready`.
    pub fn commit_taken(&mut self) -> Result<Committed, ChainError> {
        let block = self.in_progress.take().expect("no block in progress");
        let results = validate_block(&block, &self.policy, self.ledger.state());
        let summary = commit_block(&mut self.ledger, block.clone(), &results)?;
        self.counts.merge(&summary.counts);
        Ok(Committed {
            block,
            flags: results.iter().map(|r| r.flag).collect(),
            summary,
        })
    }

    /// Commits every block that is ready now.
    pub fn drain_ready(&mut self) -> Result<Vec<Committed>, ChainError> {
        let mut out = Vec::new();
        while self.take_ready().is_some() {
            out.push(self.commit_taken()?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaincode::{Proposal, Response, SmallbankOp};
    use crate::endorser::{identity_stamp, Endorsement};
    use crate::ids::ClientId;
    use crate::ledger::{hash_block, ReadSet};
    use proptest::prelude::*;

    fn peers(n: u32) -> Vec<PeerId> {
        (0..n).map(PeerId).collect()
    }

    fn endorsement(peer: PeerId, txn_id: TxnId, reads: &ReadSet, writes: &WriteSet) -> Endorsement {
        Endorsement {
            txn_id,
            peer,
            read_set: reads.clone(),
            write_set: writes.clone(),
            response: Response::Value(0),
            issued_at: SimTime::ZERO,
            stamp: identity_stamp(peer, txn_id, reads, writes, &Response::Value(0)),
        }
    }

    fn envelope(seq: u32, signers: &[PeerId], reads: ReadSet, writes: WriteSet) -> Arc<Envelope> {
        let txn_id = TxnId::new(ClientId(0), seq);
        Arc::new(Envelope {
            txn_id,
            proposal: Arc::new(Proposal {
                txn_id,
                client: ClientId(0),
                op: SmallbankOp::Query { customer: 0 },
                submitted_at: SimTime::ZERO,
            }),
            endorsements: signers
                .iter()
                .map(|&p| endorsement(p, txn_id, &reads, &writes))
                .collect(),
            client: ClientId(0),
            broadcast_at: SimTime::ZERO,
        })
    }

    fn block_on(ledger: &Ledger, txns: Vec<Arc<Envelope>>) -> Arc<Block> {
        Arc::new(Block {
            height: ledger.next_height(),
            prev_hash: ledger.tip_hash(),
            txns,
            cut_reason: CutReason::CountThreshold,
            created_at: SimTime::ZERO,
        })
    }

    fn fixture_state() -> WriteSet {
        WriteSet(
            (0..3)
                .flat_map(|c| [(Key::checking(c), 10_000), (Key::savings(c), 10_000)])
                .collect(),
        )
    }

    fn committer(n: u32) -> Committer {
        let policy = Arc::new(EndorsementPolicy::all_of(peers(n)).unwrap());
        Committer::new(PeerId(0), policy, genesis_block(), &fixture_state())
    }

    #[test]
    fn genesis_digests_are_frozen() {
        let c = committer(1);
        assert_eq!(hash_block(&genesis_block()), Digest(0x126e_94b7_1841_d0a0));
        assert_eq!(c.state().digest(), Digest(0xe81e_3514_9f47_00b8));
    }

    #[test]
    fn same_key_read_twice_in_a_block_conflicts_second() {
        let c = committer(2);
        let v0 = Some(Version::new(0, 0));
        let k = Key::checking(1);
        let t = |seq| envelope(seq, &peers(2), ReadSet(vec![(k, v0)]), WriteSet(vec![(k, 1)]));
        let b = block_on(c.ledger(), vec![t(1), t(2)]);
        let flags: Vec<_> = validate_block(&b, &c.policy, c.state())
            .iter()
            .map(|r| r.flag)
            .collect();
        assert_eq!(flags, vec![TxFlag::Valid, TxFlag::MvccConflict]);
    }

    #[test]
    fn missing_required_endorser_is_a_policy_violation() {
        let c = committer(4);
        let b = block_on(
            c.ledger(),
            vec![envelope(1, &peers(3), ReadSet::default(), WriteSet::default())],
        );
        assert_eq!(
            validate_block(&b, &c.policy, c.state())[0].flag,
            TxFlag::PolicyViolation
        );
    }

    #[test]
    fn read_only_block_is_all_valid() {
        let c = committer(2);
        let v0 = Some(Version::new(0, 0));
        let txns = (0..20)
            .map(|i| {
                envelope(
                    i,
                    &peers(2),
                    ReadSet(vec![(Key::savings(i % 3), v0)]),
                    WriteSet::default(),
                )
            })
            .collect();
        let b = block_on(c.ledger(), txns);
        assert!(validate_block(&b, &c.policy, c.state())
            .iter()
            .all(|r| r.flag == TxFlag::Valid));
    }

    #[test]
    fn full_valid_block_of_hundred_commits() {
        let mut c = committer(1);
        let txns = (0..100)
            .map(|i| {
                envelope(
                    i,
                    &peers(1),
                    ReadSet::default(),
                    WriteSet(vec![(Key::checking(1000 + i), 1)]),
                )
            })
            .collect();
        let b = block_on(c.ledger(), txns);
        c.receive(b);
        let done = c.drain_ready().unwrap();
        assert_eq!(done[0].summary.height, 1);
        assert_eq!(done[0].summary.counts.valid, 100);
        assert_eq!(c.state().len(), 6 + 100);
    }

    #[test]
    fn all_invalid_block_leaves_state_untouched() {
        let mut c = committer(2);
        let before = c.state().digest();
        let stale = Some(Version::new(7, 7));
        let txns = (0..5)
            .map(|i| {
                envelope(
                    i,
                    &peers(2),
                    ReadSet(vec![(Key::checking(0), stale)]),
                    WriteSet(vec![(Key::checking(0), 0)]),
                )
            })
            .collect();
        c.receive(block_on(c.ledger(), txns));
        let done = c.drain_ready().unwrap();
        assert_eq!(done[0].summary.height, 1);
        assert_eq!(done[0].summary.counts.mvcc_conflict, 5);
        assert_eq!(c.state().digest(), before);
    }

    #[test]
    fn out_of_order_blocks_wait_for_the_gap() {
        let mut source = committer(1);
        let mut blocks = Vec::new();
        for h in 0..3 {
            let b = block_on(
                source.ledger(),
                vec![envelope(
                    h,
                    &peers(1),
                    ReadSet::default(),
                    WriteSet(vec![(Key::checking(h), 5)]),
                )],
            );
            source.receive(b.clone());
            source.drain_ready().unwrap();
            blocks.push(b);
        }
        let mut sink = committer(1);
        assert!(sink.receive(blocks[2].clone()));
        assert!(sink.receive(blocks[1].clone()));
        assert!(sink.drain_ready().unwrap().is_empty());
        assert!(!sink.receive(blocks[1].clone()));
        assert!(sink.receive(blocks[0].clone()));
        let done = sink.drain_ready().unwrap();
        assert_eq!(done.iter().map(|c| c.summary.height).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(sink.ledger().tip_hash(), source.ledger().tip_hash());
        assert_eq!(sink.state().digest(), source.state().digest());
        assert!(!sink.receive(blocks[0].clone()));
        assert_eq!(sink.duplicates(), 2);
    }

    #[test]
    fn gossip_anchors_round_robin() {
        assert!(gossip_targets(0, 4, 0).is_empty());
        assert_eq!(gossip_targets(0, 2, 5), vec![0, 2, 4]);
        assert_eq!(gossip_targets(1, 2, 5), vec![1, 3]);
        assert_eq!(gossip_anchor(5, 4), 1);
    }

    /// Serial oracle: txns run one at a time against a plain map; a txn is
    /// valid iff all its signers are present and every read version equals
    /// the map's current version.
    fn oracle(
        initial: &HashMap<Key, (i64, Version)>,
        height: u64,
        txns: &[(Vec<PeerId>, ReadSet, WriteSet)],
        required: usize,
    ) -> (Vec<TxFlag>, HashMap<Key, (i64, Version)>) {
        let mut state = initial.clone();
        let mut flags = Vec::new();
        for (i, (signers, reads, writes)) in txns.iter().enumerate() {
            if signers.len() < required {
                flags.push(TxFlag::PolicyViolation);
                continue;
            }
            if reads.0.iter().any(|(k, v)| state.get(k).map(|e| e.1) != *v) {
                flags.push(TxFlag::MvccConflict);
                continue;
            }
            for &(k, val) in &writes.0 {
                state.insert(k, (val, Version::new(height, i as u32)));
            }
            flags.push(TxFlag::Valid);
        }
        (flags, state)
    }

    /// (signers, reads as (key, version tag), writes)
    type ArbTxn = (u8, Vec<(u32, u8)>, Vec<(u32, i64)>);

    fn arb_txn() -> impl Strategy<Value = ArbTxn> {
        (
            0u8..4,
            proptest::collection::vec((0u32..10, 0u8..4), 0..4),
            proptest::collection::vec((0u32..10, -50i64..50), 0..3),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn validation_matches_serial_oracle(
            prior in proptest::collection::vec((0u32..10, 0i64..100), 0..10),
            raw in proptest::collection::vec(arb_txn(), 1..40),
        ) {
            let policy = Arc::new(EndorsementPolicy::all_of(peers(3)).unwrap());
            let mut c = Committer::new(PeerId(0), policy.clone(), genesis_block(), &WriteSet::default());
            // One earlier block puts some keys at version (1, i).
            let setup = prior.iter().enumerate()
                .map(|(i, &(k, v))| envelope(10_000 + i as u32, &peers(3), ReadSet::default(), WriteSet(vec![(Key::checking(k), v)])))
                .collect::<Vec<_>>();
            if !setup.is_empty() {
                c.receive(block_on(c.ledger(), setup));
                c.drain_ready().unwrap();
            }
            let initial: HashMap<Key, (i64, Version)> = c.state().iter().map(|(k, v)| (*k, *v)).collect();

            let versions = [None, Some(Version::new(1, 0)), Some(Version::new(1, 1)), Some(Version::new(1, 2))];
            let txns: Vec<(Vec<PeerId>, ReadSet, WriteSet)> = raw.iter().map(|(signers, reads, writes)| {
                let signers = if *signers == 0 { peers(2) } else { peers(3) };
                let mut r: Vec<(Key, Option<Version>)> = Vec::new();
                for &(k, v) in reads {
                    let key = Key::checking(k);
                    if r.iter().all(|(kk, _)| *kk != key) {
                        // Mostly read the currently committed version.
                        let ver = if v == 0 { versions[(k % 4) as usize] } else { initial.get(&key).map(|e| e.1) };
                        r.push((key, ver));
                    }
                }
                let mut w: Vec<(Key, i64)> = Vec::new();
                for &(k, val) in writes {
                    let key = Key::checking(k);
                    if w.iter().all(|(kk, _)| *kk != key) {
                        w.push((key, val));
                    }
                }
                (signers, ReadSet(r), WriteSet(w))
            }).collect();

            let block = block_on(c.ledger(), txns.iter().enumerate()
                .map(|(i, (s, r, w))| envelope(i as u32, s, r.clone(), w.clone())).collect());
            let (want_flags, want_state) = oracle(&initial, block.height, &txns, 3);

            c.receive(block);
            let done = c.drain_ready().unwrap();
            prop_assert_eq!(&done[0].flags, &want_flags);
            let got: HashMap<Key, (i64, Version)> = c.state().iter().map(|(k, v)| (*k, *v)).collect();
            prop_assert_eq!(got, want_state);

            // Rollback completeness: no version points at an invalid txn.
            for (_, (_, v)) in c.state().iter() {
                if v.height == done[0].block.height {
                    prop_assert_eq!(want_flags[v.index as usize], TxFlag::Valid);
                }
            }
        }
    }
}
