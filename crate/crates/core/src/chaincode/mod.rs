//! Smallbank contract execution and workload generation.

mod smallbank;
mod workload;

pub use smallbank::{execute, Execution, OpKind, Proposal, Response, SmallbankOp};
pub use workload::{generate, generate_for, AccessDistribution, OpMix, WorkloadConfig, WorkloadStream};
