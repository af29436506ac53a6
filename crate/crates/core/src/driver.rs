//! Open-loop benchmark client.
//!
//! Proposal `i` is submitted at `start + round(i * 1e6 / T)` microseconds
//! regardless of outstanding work. Each client collects endorsements until the
//! policy holds, broadcasts the envelope to one orderer, and learns commits
//! from its home peer.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chaincode::{OpKind, Proposal};
use crate::endorser::{policy_satisfied, Endorsement, EndorsementPolicy};
use crate::ids::{ClientId, TxnId};
use crate::ledger::TxFlag;
use crate::message::CommitEntry;
use crate::ordering::Envelope;
use crate::sim::{SimDuration, SimTime};

#[derive(Clone, Debug, PartialEq)]
pub struct ClientConfig {
    pub rate_tps: f64,
    pub duration: SimDuration,
    pub endorse_timeout: SimDuration,
    pub broadcast_timeout: SimDuration,
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rate_tps.is_finite() && self.rate_tps > 0.0) {
            return Err("client rate must be positive".into());
        }
        if self.endorse_timeout == SimDuration::ZERO || self.broadcast_timeout == SimDuration::ZERO {
            return Err("client timeouts must be positive".into());
        }
        Ok(())
    }

    /// Offset of submission `i` from the start of the run.
    pub fn offset(&self, i: u32) -> SimDuration {
        SimDuration::from_micros((f64::from(i) * 1e6 / self.rate_tps).round() as u64)
    }

    /// Number of submissions whose offset falls before `duration`.
    pub fn planned(&self) -> u32 {
        let mut n = (self.duration.as_secs_f64() * self.rate_tps).floor() as u32;
        while self.offset(n) < self.duration {
            n += 1;
        }
        while n > 0 && self.offset(n - 1) >= self.duration {
            n -= 1;
        }
        n
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxnStatus {
    Committed,
    InvalidCommitted,
    DroppedEndorsement,
    DroppedBroadcast,
    InFlight,
}

impl TxnStatus {
    pub fn name(self) -> &'static str {
        match self {
            TxnStatus::Committed => "committed",
            TxnStatus::InvalidCommitted => "invalid_committed",
            TxnStatus::DroppedEndorsement => "dropped_endorsement",
            TxnStatus::DroppedBroadcast => "dropped_broadcast",
            TxnStatus::InFlight => "in_flight",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxnJourney {
    pub txn_id: TxnId,
    pub client: ClientId,
    pub op: OpKind,
    pub submit: SimTime,
    pub endorsed: Option<SimTime>,
    pub bcast_ack: Option<SimTime>,
    pub commit: Option<SimTime>,
    pub status: TxnStatus,
}

impl TxnJourney {
    pub fn latency(&self) -> Option<SimDuration> {
        self.commit.map(|c| c - self.submit)
    }
}

#[derive(Clone, Debug)]
enum Phase {
    Endorsing(Vec<Endorsement>),
    Ordering,
    Done,
}

/// What a submission asks the caller to do.
#[derive(Clone, Debug)]
pub struct Submission {
    pub proposal: Arc<Proposal>,
    pub next_at: Option<SimTime>,
}

/// One benchmark client.
#[derive(Clone, Debug)]
pub struct Client {
    id: ClientId,
    cfg: ClientConfig,
    policy: Arc<EndorsementPolicy>,
    start: SimTime,
    proposals: Vec<Proposal>,
    journeys: Vec<TxnJourney>,
    phases: Vec<Phase>,
    refusals: u64,
    ignored: u64,
}

impl Client {
    /// `proposals` must hold at least `cfg.planned()` entries.
    pub fn new(
        id: ClientId,
        cfg: ClientConfig,
        policy: Arc<EndorsementPolicy>,
        start: SimTime,
        mut proposals: Vec<Proposal>,
    ) -> Self {
        let planned = cfg.planned() as usize;
        assert!(proposals.len() >= planned, "workload shorter than schedule");
        proposals.truncate(planned);
        Client {
            id,
            cfg,
            policy,
            start,
            proposals,
            journeys: Vec::with_capacity(planned),
            phases: Vec::with_capacity(planned),
            refusals: 0,
            ignored: 0,
        }
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn first_submit(&self) -> Option<SimTime> {
        (!self.proposals.is_empty()).then_some(self.start)
    }

    pub fn journeys(&self) -> &[TxnJourney] {
        &self.journeys
    }

    pub fn into_journeys(self) -> Vec<TxnJourney> {
        self.journeys
    }

    pub fn refusals(&self) -> u64 {
        self.refusals
    }

    /// Late or duplicate responses that were dropped.
    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    /// Submits the next proposal. Called at the scheduled instant.
    pub fn submit_next(&mut self, now: SimTime) -> Option<Submission> {
        let i = self.journeys.len();
        let proposal = self.proposals.get_mut(i)?;
        proposal.submitted_at = now;
        let proposal = proposal.clone();
        self.journeys.push(TxnJourney {
            txn_id: proposal.txn_id,
            client: self.id,
            op: proposal.op.kind(),
            submit: now,
            endorsed: None,
            bcast_ack: None,
            commit: None,
            status: TxnStatus::InFlight,
        });
        self.phases.push(Phase::Endorsing(Vec::new()));
        let next = i as u32 + 1;
        let next_at = ((next as usize) < self.proposals.len()).then(|| self.start + self.cfg.offset(next));
        Some(Submission {
            proposal: Arc::new(proposal),
            next_at,
        })
    }

    fn slot(&self, txn_id: TxnId) -> Option<usize> {
        let i = txn_id.seq as usize;
        (txn_id.client == self.id && i < self.journeys.len()).then_some(i)
    }

    /// Records an endorsement; returns the envelope once the policy holds.
    pub fn on_endorsement(&mut self, e: &Endorsement, now: SimTime) -> Option<Arc<Envelope>> {
        let Some(i) = self.slot(e.txn_id) else {
            self.ignored += 1;
            return None;
        };
        let Phase::Endorsing(collected) = &mut self.phases[i] else {
            self.ignored += 1;
            return None;
        };
        collected.push(e.clone());
        if collected.len() < self.policy.threshold() {
            return None;
        }
        let check = policy_satisfied(&self.policy, collected).expect("one txn id per collection");
        if !check.satisfied {
            return None;
        }
        let endorsements = check.witnesses.iter().map(|&w| collected[w].clone()).collect();
        self.phases[i] = Phase::Ordering;
        self.journeys[i].endorsed = Some(now);
        Some(Arc::new(Envelope {
            txn_id: e.txn_id,
            proposal: Arc::new(self.proposals[i].clone()),
            endorsements,
            client: self.id,
            broadcast_at: now,
        }))
    }

    pub fn on_refusal(&mut self) {
        self.refusals += 1;
    }

    pub fn on_endorse_timeout(&mut self, seq: u32) {
        let i = seq as usize;
        if matches!(self.phases[i], Phase::Endorsing(_)) {
            self.phases[i] = Phase::Done;
            self.journeys[i].status = TxnStatus::DroppedEndorsement;
        }
    }

    pub fn on_broadcast_ack(&mut self, txn_id: TxnId, now: SimTime) {
        match self.slot(txn_id) {
            Some(i) if matches!(self.phases[i], Phase::Ordering) => {
                self.journeys[i].bcast_ack = Some(now);
            }
            _ => self.ignored += 1,
        }
    }

    pub fn on_broadcast_timeout(&mut self, seq: u32) {
        let i = seq as usize;
        let j = &mut self.journeys[i];
        if matches!(self.phases[i], Phase::Ordering) && j.bcast_ack.is_none() && j.commit.is_none() {
            self.phases[i] = Phase::Done;
            j.status = TxnStatus::DroppedBroadcast;
        }
    }

    /// A commit notice from the home peer. It settles the journey even after
    /// a broadcast timeout, since the envelope did reach the chain.
    pub fn on_commit(&mut self, entry: CommitEntry, at: SimTime) {
        let i = entry.seq as usize;
        let j = &mut self.journeys[i];
        let settles = match self.phases[i] {
            Phase::Ordering => true,
            Phase::Done => j.status == TxnStatus::DroppedBroadcast,
            Phase::Endorsing(_) => false,
        };
        if !settles {
            self.ignored += 1;
            return;
        }
        self.phases[i] = Phase::Done;
        j.commit = Some(at);
        j.status = match entry.flag {
            TxFlag::Valid => TxnStatus::Committed,
            _ => TxnStatus::InvalidCommitted,
        };
    }
}
