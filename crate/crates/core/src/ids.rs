use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

/// Endorsing or non-endorsing peer. Ordering follows the rendered name,
/// which is zero-padded, so numeric and lexicographic order agree.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "client{:04}", self.0)
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "peer{:04}", self.0)
    }
}

/// Transaction id: unique per run because each client numbers its own
/// submissions.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxnId {
    pub client: ClientId,
    pub seq: u32,
}

impl TxnId {
    pub const GENESIS: TxnId = TxnId {
        client: ClientId(u32::MAX),
        seq: 0,
    };

    pub fn new(client: ClientId, seq: u32) -> Self {
        TxnId { client, seq }
    }

    /// Bytes fed into block hashes.
    pub fn canonical_bytes(&self) -> [u8; 8] {
        let mut out = [0u8; 8];
        out[..4].copy_from_slice(&self.client.0.to_le_bytes());
        out[4..].copy_from_slice(&self.seq.to_le_bytes());
        out
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == TxnId::GENESIS {
            f.write_str("genesis")
        } else {
            write!(f, "c{:04}-{:07}", self.client.0, self.seq)
        }
    }
}
