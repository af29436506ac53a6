pub mod chaincode;
pub mod committer;
pub mod config;
pub mod driver;
pub mod endorser;
pub mod harness;
pub mod ids;
pub mod ledger;
pub mod message;
pub mod metrics;
pub mod ordering;
pub mod pipeline;
pub mod sim;
