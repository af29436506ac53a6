use thiserror::Error;

/// Broker index inside the log cluster; broker 0 is the static leader.
pub type BrokerIndex = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogError {
    #[error("only {reachable} of {needed} in-sync replicas reachable")]
    Unavailable { reachable: u32, needed: u32 },
}

#[derive(Clone, Debug)]
struct Slot<T> {
    item: T,
    copies: u32,
}

/// Outcome of a leader append.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Appended {
    pub offset: u64,
    /// Followers that must receive a copy.
    pub followers: Vec<BrokerIndex>,
    /// Offsets that became committed (min_insync = 1 commits on append).
    pub committed: Vec<u64>,
}

/// Single-partition log with a static leader. A record commits once
/// `min_insync` brokers hold it (the leader's own write counts); offsets
/// commit strictly in order.
#[derive(Clone, Debug)]
pub struct ReplicatedLog<T> {
    brokers: u32,
    replication_factor: u32,
    min_insync: u32,
    reachable: u32,
    slots: Vec<Slot<T>>,
    committed: u64,
    replica_len: Vec<u64>,
}

impl<T> ReplicatedLog<T> {
    /// Panics unless `1 <= min_insync <= replication_factor <= brokers`;
    /// configuration validation happens before construction.
    pub fn new(brokers: u32, replication_factor: u32, min_insync: u32) -> Self {
        assert!(
            1 <= min_insync && min_insync <= replication_factor && replication_factor <= brokers,
            "invalid log shape K={brokers} rf={replication_factor} min_insync={min_insync}"
        );
        ReplicatedLog {
            brokers,
            replication_factor,
            min_insync,
            reachable: replication_factor,
            slots: Vec::new(),
            committed: 0,
            replica_len: vec![0; brokers as usize],
        }
    }

    /// Restricts how many designated replicas (leader included) respond.
    pub fn with_reachable(mut self, reachable: u32) -> Self {
        self.reachable = reachable.min(self.replication_factor);
        self
    }

    pub fn brokers(&self) -> u32 {
        self.brokers
    }

    pub fn replication_factor(&self) -> u32 {
        self.replication_factor
    }

    pub fn min_insync(&self) -> u32 {
        self.min_insync
    }

    pub fn len(&self) -> u64 {
        self.slots.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of committed records; the next offset to commit.
    pub fn committed(&self) -> u64 {
        self.committed
    }

    pub fn copies(&self, offset: u64) -> Option<u32> {
        self.slots.get(offset as usize).map(|s| s.copies)
    }

    pub fn record(&self, offset: u64) -> Option<&T> {
        self.slots.get(offset as usize).map(|s| &s.item)
    }

    /// Replicated prefix length held by `broker`.
    pub fn replica_len(&self, broker: BrokerIndex) -> u64 {
        self.replica_len[broker as usize]
    }

    fn followers(&self) -> Vec<BrokerIndex> {
        (1..self.reachable).collect()
    }

    /// Leader write: assigns the next offset and names the followers.
    pub fn append(&mut self, item: T) -> Result<Appended, LogError> {
        if self.reachable < self.min_insync {
            return Err(LogError::Unavailable {
                reachable: self.reachable,
                needed: self.min_insync,
            });
        }
        let offset = self.slots.len() as u64;
        self.slots.push(Slot { item, copies: 1 });
        self.replica_len[0] = offset + 1;
        Ok(Appended {
            offset,
            followers: self.followers(),
            committed: self.advance(),
        })
    }

    /// Follower `broker` stored `offset`. Returns newly committed offsets.
    pub fn ack(&mut self, broker: BrokerIndex, offset: u64) -> Vec<u64> {
        assert!(
            broker != 0 && broker < self.replication_factor,
            "ack from non-replica {broker}"
        );
        let slot = &mut self.slots[offset as usize];
        slot.copies += 1;
        let held = &mut self.replica_len[broker as usize];
        *held = (*held).max(offset + 1);
        self.advance()
    }

    fn advance(&mut self) -> Vec<u64> {
        let start = self.committed;
        while let Some(slot) = self.slots.get(self.committed as usize) {
            if slot.copies < self.min_insync {
                break;
            }
            self.committed += 1;
        }
        (start..self.committed).collect()
    }
}
