use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::smallbank::{OpKind, Proposal, SmallbankOp};
use crate::ids::{ClientId, TxnId};
use crate::ledger::{Key, WriteSet};
use crate::sim::SimTime;

/// Probability of each operation. Defaults to the customary Smallbank mix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpMix {
    pub transact_savings: f64,
    pub deposit_checking: f64,
    pub send_payment: f64,
    pub write_check: f64,
    pub amalgamate: f64,
    pub query: f64,
}

impl Default for OpMix {
    fn default() -> Self {
        OpMix {
            transact_savings: 0.15,
            deposit_checking: 0.15,
            send_payment: 0.25,
            write_check: 0.15,
            amalgamate: 0.15,
            query: 0.15,
        }
    }
}

impl OpMix {
    pub fn only(kind: OpKind) -> Self {
        let mut m = OpMix {
            transact_savings: 0.0,
            deposit_checking: 0.0,
            send_payment: 0.0,
            write_check: 0.0,
            amalgamate: 0.0,
            query: 0.0,
        };
        *m.weight_mut(kind) = 1.0;
        m
    }

    pub fn weight(&self, kind: OpKind) -> f64 {
        match kind {
            OpKind::TransactSavings => self.transact_savings,
            OpKind::DepositChecking => self.deposit_checking,
            OpKind::SendPayment => self.send_payment,
            OpKind::WriteCheck => self.write_check,
            OpKind::Amalgamate => self.amalgamate,
            OpKind::Query => self.query,
        }
    }

    pub fn weight_mut(&mut self, kind: OpKind) -> &mut f64 {
        match kind {
            OpKind::TransactSavings => &mut self.transact_savings,
            OpKind::DepositChecking => &mut self.deposit_checking,
            OpKind::SendPayment => &mut self.send_payment,
            OpKind::WriteCheck => &mut self.write_check,
            OpKind::Amalgamate => &mut self.amalgamate,
            OpKind::Query => &mut self.query,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut sum = 0.0;
        for kind in OpKind::ALL {
            let p = self.weight(kind);
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("op_mix.{} = {p} is outside [0, 1]", kind.name()));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("op_mix probabilities sum to {sum}, expected 1"));
        }
        Ok(())
    }

    fn sample(&self, u: f64) -> OpKind {
        let mut acc = 0.0;
        let mut last = OpKind::Query;
        for kind in OpKind::ALL {
            let p = self.weight(kind);
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = kind;
            if u < acc {
                return kind;
            }
        }
        last
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AccessDistribution {
    Uniform,
    /// With probability `prob_hot`, pick from the first
    /// `fraction_hot * n_accounts` customers.
    Hotspot {
        fraction_hot: f64,
        prob_hot: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub n_accounts: u32,
    pub op_mix: OpMix,
    pub access: AccessDistribution,
    /// Amounts are drawn uniformly from `1..=max_amount`.
    pub max_amount: i64,
    pub initial_checking: i64,
    pub initial_savings: i64,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            n_accounts: 10_000,
            op_mix: OpMix::default(),
            access: AccessDistribution::Uniform,
            max_amount: 100,
            initial_checking: 10_000,
            initial_savings: 10_000,
            seed: 0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_accounts < 2 {
            return Err("workload.n_accounts must be at least 2".into());
        }
        if self.max_amount < 1 {
            return Err("workload.max_amount must be positive".into());
        }
        if self.initial_checking < 0 || self.initial_savings < 0 {
            return Err("workload initial balances must be non-negative".into());
        }
        if let AccessDistribution::Hotspot { fraction_hot, prob_hot } = self.access {
            if !(fraction_hot > 0.0 && fraction_hot <= 1.0) {
                return Err(format!(
                    "workload.access.fraction_hot = {fraction_hot} must lie in (0, 1]"
                ));
            }
            if !(0.0..=1.0).contains(&prob_hot) {
                return Err(format!("workload.access.prob_hot = {prob_hot} must lie in [0, 1]"));
            }
        }
        self.op_mix.validate()
    }

    /// Write set loading every account with its initial balances.
    pub fn initial_write_set(&self) -> WriteSet {
        WriteSet(
            (0..self.n_accounts)
                .flat_map(|c| {
                    [
                        (Key::checking(c), self.initial_checking),
                        (Key::savings(c), self.initial_savings),
                    ]
                })
                .collect(),
        )
    }
}

/// Deterministic proposal stream for one client. Each client draws from its
/// own ChaCha stream of the workload seed.
pub struct WorkloadStream<'a> {
    cfg: &'a WorkloadConfig,
    client: ClientId,
    rng: ChaCha8Rng,
    next_seq: u32,
}

impl<'a> WorkloadStream<'a> {
    pub fn new(cfg: &'a WorkloadConfig, client: ClientId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::from(client.0));
        WorkloadStream {
            cfg,
            client,
            rng,
            next_seq: 0,
        }
    }

    fn customer(&mut self) -> u32 {
        let n = self.cfg.n_accounts;
        match self.cfg.access {
            AccessDistribution::Uniform => self.rng.random_range(0..n),
            AccessDistribution::Hotspot { fraction_hot, prob_hot } => {
                let hot = ((f64::from(n) * fraction_hot).round() as u32).clamp(1, n);
                if hot == n || self.rng.random::<f64>() < prob_hot {
                    self.rng.random_range(0..hot)
                } else {
                    self.rng.random_range(hot..n)
                }
            }
        }
    }

    fn pair(&mut self) -> (u32, u32) {
        let a = self.customer();
        loop {
            let b = self.customer();
            if b != a {
                return (a, b);
            }
        }
    }

    fn amount(&mut self) -> i64 {
        self.rng.random_range(1..=self.cfg.max_amount)
    }

    pub fn next_op(&mut self) -> SmallbankOp {
        let kind = self.cfg.op_mix.sample(self.rng.random());
        match kind {
            OpKind::TransactSavings => SmallbankOp::TransactSavings {
                customer: self.customer(),
                amount: self.amount(),
            },
            OpKind::DepositChecking => SmallbankOp::DepositChecking {
                customer: self.customer(),
                amount: self.amount(),
            },
            OpKind::SendPayment => {
                let (from, to) = self.pair();
                SmallbankOp::SendPayment {
                    from,
                    to,
                    amount: self.amount(),
                }
            }
            OpKind::WriteCheck => SmallbankOp::WriteCheck {
                customer: self.customer(),
                amount: self.amount(),
            },
            OpKind::Amalgamate => {
                let (from, to) = self.pair();
                SmallbankOp::Amalgamate { from, to }
            }
            OpKind::Query => SmallbankOp::Query {
                customer: self.customer(),
            },
        }
    }
}

impl Iterator for WorkloadStream<'_> {
    type Item = Proposal;

    fn next(&mut self) -> Option<Proposal> {
        let op = self.next_op();
        let txn_id = TxnId::new(self.client, self.next_seq);
        self.next_seq += 1;
        Some(Proposal {
            txn_id,
            client: self.client,
            op,
            submitted_at: SimTime::ZERO,
        })
    }
}

/// First `count` proposals of client 0's stream. `submitted_at` is filled in
/// by the driver at send time.
pub fn generate(cfg: &WorkloadConfig, count: usize) -> Vec<Proposal> {
    generate_for(cfg, ClientId(0), count)
}

pub fn generate_for(cfg: &WorkloadConfig, client: ClientId, count: usize) -> Vec<Proposal> {
    WorkloadStream::new(cfg, client).take(count).collect()
}
