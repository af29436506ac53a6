//! Endorsement: authorization, speculative execution and policy evaluation.
//!
//! Signatures are modeled as identity stamps: a digest binding the endorsing
//! peer to the transaction id and the exact execution result. Validation
//! recomputes the stamp, so a tampered read/write set no longer counts toward
//! the policy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::Xxh3;

use crate::chaincode::{execute, Proposal, Response};
use crate::ids::{ClientId, PeerId, TxnId};
use crate::ledger::{Digest, ReadSet, StateView, WriteSet};
use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Endorsement {
    pub txn_id: TxnId,
    pub peer: PeerId,
    pub read_set: ReadSet,
    pub write_set: WriteSet,
    pub response: Response,
    pub issued_at: SimTime,
    pub stamp: Digest,
}

impl Endorsement {
    /// Same execution result (the payload that is compared across peers).
    pub fn matches(&self, other: &Endorsement) -> bool {
        self.response == other.response && self.read_set == other.read_set && self.write_set == other.write_set
    }

    pub fn stamp_is_valid(&self) -> bool {
        self.stamp == identity_stamp(self.peer, self.txn_id, &self.read_set, &self.write_set, &self.response)
    }

    /// Number of read and write entries, used for message sizing.
    pub fn rw_entries(&self) -> usize {
        self.read_set.len() + self.write_set.len()
    }
}

pub fn identity_stamp(peer: PeerId, txn_id: TxnId, reads: &ReadSet, writes: &WriteSet, response: &Response) -> Digest {
    let mut h = Xxh3::new();
    h.update(b"endorse");
    h.update(&peer.0.to_le_bytes());
    h.update(&txn_id.canonical_bytes());
    for (k, v) in &reads.0 {
        h.update(&k.customer.to_le_bytes());
        h.update(&[k.kind as u8]);
        match v {
            Some(v) => {
                h.update(&[1]);
                h.update(&v.height.to_le_bytes());
                h.update(&v.index.to_le_bytes());
            }
            None => h.update(&[0]),
        }
    }
    h.update(b"|");
    for (k, val) in &writes.0 {
        h.update(&k.customer.to_le_bytes());
        h.update(&[k.kind as u8]);
        h.update(&val.to_le_bytes());
    }
    match response {
        Response::Value(v) => {
            h.update(&[1]);
            h.update(&v.to_le_bytes());
        }
        Response::Rejected => h.update(&[0]),
    }
    Digest(h.digest())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refusal {
    pub txn_id: TxnId,
    pub peer: PeerId,
}

/// An endorsing peer's identity and access list.
#[derive(Clone, Debug)]
pub struct Endorser {
    peer: PeerId,
    denied: BTreeSet<ClientId>,
}

impl Endorser {
    pub fn new(peer: PeerId) -> Self {
        Endorser {
            peer,
            denied: BTreeSet::new(),
        }
    }

    pub fn with_denied(peer: PeerId, denied: impl IntoIterator<Item = ClientId>) -> Self {
        Endorser {
            peer,
            denied: denied.into_iter().collect(),
        }
    }

    pub fn peer(&self) -> PeerId {
        self.peer
    }

    pub fn is_authorized(&self, client: ClientId) -> bool {
        !self.denied.contains(&client)
    }

    /// Executes the proposal against committed state and signs the result.
    pub fn endorse<S: StateView + ?Sized>(
        &self,
        proposal: &Proposal,
        state: &S,
        now: SimTime,
    ) -> Result<Endorsement, Refusal> {
        if !self.is_authorized(proposal.client) {
            return Err(Refusal {
                txn_id: proposal.txn_id,
                peer: self.peer,
            });
        }
        let ex = execute(&proposal.op, state);
        let stamp = identity_stamp(self.peer, proposal.txn_id, &ex.read_set, &ex.write_set, &ex.response);
        Ok(Endorsement {
            txn_id: proposal.txn_id,
            peer: self.peer,
            read_set: ex.read_set,
            write_set: ex.write_set,
            response: ex.response,
            issued_at: now,
            stamp,
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("endorsements for different transactions ({0} and {1})")]
    MixedTxnIds(TxnId, TxnId),
    #[error("threshold {threshold} must lie in 1..={required}")]
    BadThreshold { threshold: usize, required: usize },
}

/// `threshold`-of-`required` matching endorsements.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementPolicy {
    required: BTreeSet<PeerId>,
    threshold: usize,
}

impl EndorsementPolicy {
    pub fn new(required: impl IntoIterator<Item = PeerId>, threshold: usize) -> Result<Self, PolicyError> {
        let required: BTreeSet<PeerId> = required.into_iter().collect();
        if threshold == 0 || threshold > required.len() {
            return Err(PolicyError::BadThreshold {
                threshold,
                required: required.len(),
            });
        }
        Ok(EndorsementPolicy { required, threshold })
    }

    /// Every listed peer must endorse.
    pub fn all_of(required: impl IntoIterator<Item = PeerId>) -> Result<Self, PolicyError> {
        let required: BTreeSet<PeerId> = required.into_iter().collect();
        let n = required.len();
        Self::new(required, n)
    }

    pub fn required(&self) -> &BTreeSet<PeerId> {
        &self.required
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyCheck {
    pub satisfied: bool,
    /// Indices into the input slice, ordered by peer identity. Empty unless
    /// satisfied.
    pub witnesses: Vec<usize>,
}

/// True iff at least `threshold` endorsements from distinct required peers,
/// each with a valid stamp, carry the same execution result.
///
/// When several matching groups qualify, the witnessing subset is the
/// lexicographically smallest list of `threshold` peer identities.
pub fn policy_satisfied(policy: &EndorsementPolicy, endorsements: &[Endorsement]) -> Result<PolicyCheck, PolicyError> {
    if let Some(first) = endorsements.first() {
        if let Some(other) = endorsements.iter().find(|e| e.txn_id != first.txn_id) {
            return Err(PolicyError::MixedTxnIds(first.txn_id, other.txn_id));
        }
    }

    let mut eligible: Vec<usize> = (0..endorsements.len())
        .filter(|&i| {
            let e = &endorsements[i];
            policy.required.contains(&e.peer) && e.stamp_is_valid()
        })
        .collect();
    eligible.sort_by_key(|&i| (endorsements[i].peer, i));

    let mut best: Option<Vec<usize>> = None;
    let mut grouped = vec![false; eligible.len()];
    for a in 0..eligible.len() {
        if grouped[a] {
            continue;
        }
        let head = &endorsements[eligible[a]];
        let mut group = vec![eligible[a]];
        let mut members = BTreeSet::from([head.peer]);
        grouped[a] = true;
        for b in a + 1..eligible.len() {
            let e = &endorsements[eligible[b]];
            if !grouped[b] && e.matches(head) {
                grouped[b] = true;
                if members.insert(e.peer) {
                    group.push(eligible[b]);
                }
            }
        }
        if group.len() >= policy.threshold {
            group.truncate(policy.threshold);
            let better = match &best {
                None => true,
                Some(cur) => {
                    let ids = |g: &[usize]| g.iter().map(|&i| endorsements[i].peer).collect::<Vec<_>>();
                    ids(&group) < ids(cur)
                }
            };
            if better {
                best = Some(group);
            }
        }
    }

    Ok(match best {
        Some(witnesses) => PolicyCheck {
            satisfied: true,
            witnesses,
        },
        None => PolicyCheck {
            satisfied: false,
            witnesses: Vec::new(),
        },
    })
}
