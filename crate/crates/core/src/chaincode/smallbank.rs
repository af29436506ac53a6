//! Smallbank contract.
//!
//! Every customer owns a checking and a savings account. Six operations:
//!
//! | op                | reads                          | writes                              | rejects when                 |
//! |-------------------|--------------------------------|-------------------------------------|------------------------------|
//! | `TransactSavings` | savings(c)                     | savings(c) += amt                   | account missing              |
//! | `DepositChecking` | checking(c)                    | checking(c) += amt                  | account missing              |
//! | `SendPayment`     | checking(a), checking(b)       | checking(a) -= amt, checking(b) += amt | checking(a) < amt          |
//! | `WriteCheck`      | savings(c), checking(c)        | checking(c) -= amt (+1 if overdrawn) | account missing             |
//! | `Amalgamate`      | savings(a), checking(a), checking(b) | savings(a)=0, checking(a)=0, checking(b) += both | account missing |
//! | `Query`           | savings(c), checking(c)        | nothing                             | account missing              |
//!
//! Amounts are non-negative; a negative amount is rejected. A rejected
//! execution keeps its read set and has an empty write set.

use serde::{Deserialize, Serialize};

use crate::ids::{ClientId, TxnId};
use crate::ledger::{Key, ReadSet, StateView, WriteSet};
use crate::sim::SimTime;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SmallbankOp {
    TransactSavings { customer: u32, amount: i64 },
    DepositChecking { customer: u32, amount: i64 },
    SendPayment { from: u32, to: u32, amount: i64 },
    WriteCheck { customer: u32, amount: i64 },
    Amalgamate { from: u32, to: u32 },
    Query { customer: u32 },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    TransactSavings,
    DepositChecking,
    SendPayment,
    WriteCheck,
    Amalgamate,
    Query,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::TransactSavings,
        OpKind::DepositChecking,
        OpKind::SendPayment,
        OpKind::WriteCheck,
        OpKind::Amalgamate,
        OpKind::Query,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::TransactSavings => "transact_savings",
            OpKind::DepositChecking => "deposit_checking",
            OpKind::SendPayment => "send_payment",
            OpKind::WriteCheck => "write_check",
            OpKind::Amalgamate => "amalgamate",
            OpKind::Query => "query",
        }
    }
}

impl SmallbankOp {
    pub fn kind(&self) -> OpKind {
        match self {
            SmallbankOp::TransactSavings { .. } => OpKind::TransactSavings,
            SmallbankOp::DepositChecking { .. } => OpKind::DepositChecking,
            SmallbankOp::SendPayment { .. } => OpKind::SendPayment,
            SmallbankOp::WriteCheck { .. } => OpKind::WriteCheck,
            SmallbankOp::Amalgamate { .. } => OpKind::Amalgamate,
            SmallbankOp::Query { .. } => OpKind::Query,
        }
    }

    /// Structural validity: distinct customers for two-party ops.
    pub fn is_well_formed(&self) -> bool {
        match *self {
            SmallbankOp::SendPayment { from, to, .. } | SmallbankOp::Amalgamate { from, to } => from != to,
            _ => true,
        }
    }
}

/// A client's request to invoke the contract.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub txn_id: TxnId,
    pub client: ClientId,
    pub op: SmallbankOp,
    pub submitted_at: SimTime,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Value(i64),
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Execution {
    pub read_set: ReadSet,
    pub write_set: WriteSet,
    pub response: Response,
}

/// Read/write tracking over a snapshot. Reads are recorded once per key.
struct TxContext<'a, S: StateView + ?Sized> {
    snapshot: &'a S,
    reads: ReadSet,
    writes: WriteSet,
}

impl<'a, S: StateView + ?Sized> TxContext<'a, S> {
    fn get(&mut self, key: Key) -> Option<i64> {
        let found = self.snapshot.read_state(&key);
        if !self.reads.contains(&key) {
            self.reads.0.push((key, found.map(|(_, v)| v)));
        }
        found.map(|(v, _)| v)
    }

    fn put(&mut self, key: Key, value: i64) {
        match self.writes.0.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.writes.0.push((key, value)),
        }
    }

    fn finish(self, response: Response) -> Execution {
        let write_set = match response {
            Response::Rejected => WriteSet::default(),
            Response::Value(_) => self.writes,
        };
        Execution {
            read_set: self.reads,
            write_set,
            response,
        }
    }
}

/// Speculatively executes `op` against a read-only snapshot.
pub fn execute<S: StateView + ?Sized>(op: &SmallbankOp, snapshot: &S) -> Execution {
    let mut tx = TxContext {
        snapshot,
        reads: ReadSet::default(),
        writes: WriteSet::default(),
    };
    let response = run(op, &mut tx);
    tx.finish(response)
}

fn run<S: StateView + ?Sized>(op: &SmallbankOp, tx: &mut TxContext<'_, S>) -> Response {
    use Response::{Rejected, Value};
    if !op.is_well_formed() {
        return Rejected;
    }
    match *op {
        SmallbankOp::TransactSavings { customer, amount } => {
            if amount < 0 {
                return Rejected;
            }
            let Some(bal) = tx.get(Key::savings(customer)) else {
                return Rejected;
            };
            tx.put(Key::savings(customer), bal + amount);
            Value(bal + amount)
        }
        SmallbankOp::DepositChecking { customer, amount } => {
            if amount < 0 {
                return Rejected;
            }
            let Some(bal) = tx.get(Key::checking(customer)) else {
                return Rejected;
            };
            tx.put(Key::checking(customer), bal + amount);
            Value(bal + amount)
        }
        SmallbankOp::SendPayment { from, to, amount } => {
            if amount < 0 {
                return Rejected;
            }
            let (Some(src), Some(dst)) = (tx.get(Key::checking(from)), tx.get(Key::checking(to))) else {
                return Rejected;
            };
            if src < amount {
                return Rejected;
            }
            tx.put(Key::checking(from), src - amount);
            tx.put(Key::checking(to), dst + amount);
            Value(src - amount)
        }
        SmallbankOp::WriteCheck { customer, amount } => {
            if amount < 0 {
                return Rejected;
            }
            let (Some(sav), Some(chk)) = (tx.get(Key::savings(customer)), tx.get(Key::checking(customer))) else {
                return Rejected;
            };
            let debit = if sav + chk < amount { amount + 1 } else { amount };
            tx.put(Key::checking(customer), chk - debit);
            Value(chk - debit)
        }
        SmallbankOp::Amalgamate { from, to } => {
            let (Some(sav), Some(chk), Some(dst)) = (
                tx.get(Key::savings(from)),
                tx.get(Key::checking(from)),
                tx.get(Key::checking(to)),
            ) else {
                return Rejected;
            };
            tx.put(Key::savings(from), 0);
            tx.put(Key::checking(from), 0);
            tx.put(Key::checking(to), dst + sav + chk);
            Value(dst + sav + chk)
        }
        SmallbankOp::Query { customer } => {
            let (Some(sav), Some(chk)) = (tx.get(Key::savings(customer)), tx.get(Key::checking(customer))) else {
                return Rejected;
            };
            Value(sav + chk)
        }
    }
}
