//! Ordering service: orderer front-ends, a single-partition replicated log
//! with quorum commit, and the block cutter.
//!
//! The log leader (broker 0) runs the cutter over committed records and
//! streams records plus cut markers to every orderer, so all orderers build
//! the same chain. One designated orderer per block fans it out to peers.

mod cutter;
mod log;
mod orderer;

use std::sync::Arc;

pub use cutter::{cut_block, Batch, BlockCutter, BlockCutterConfig, Pending, TimerRequest};
pub use log::{Appended, BrokerIndex, LogError, ReplicatedLog};
pub use orderer::{Broadcast, CutStat, LeaderOutput, LeaderState, LogEntry, LogRecord, OrdererOutput, OrdererState};

use crate::chaincode::{Proposal, SmallbankOp};
use crate::endorser::Endorsement;
use crate::ids::{ClientId, TxnId};
use crate::sim::SimTime;

/// Endorsed transaction as submitted to the ordering service.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub txn_id: TxnId,
    pub proposal: Arc<Proposal>,
    pub endorsements: Vec<Endorsement>,
    pub client: ClientId,
    pub broadcast_at: SimTime,
}

impl Envelope {
    /// An unendorsed query envelope; useful as a chain fixture.
    pub fn bare(txn_id: TxnId) -> Self {
        Envelope {
            txn_id,
            proposal: Arc::new(Proposal {
                txn_id,
                client: txn_id.client,
                op: SmallbankOp::Query { customer: 0 },
                submitted_at: SimTime::ZERO,
            }),
            endorsements: Vec::new(),
            client: txn_id.client,
            broadcast_at: SimTime::ZERO,
        }
    }

    /// Read/write entries carried by the first endorsement.
    pub fn rw_entries(&self) -> usize {
        self.endorsements.first().map_or(0, Endorsement::rw_entries)
    }
}
