use std::collections::BTreeMap;

use proptest::prelude::*;

use eov_sim::config::ExperimentConfig;
use eov_sim::driver::{ClientConfig, TxnStatus};
use eov_sim::ids::TxnId;
use eov_sim::ledger::{hash_block, TxFlag};
use eov_sim::metrics::RunReport;
use eov_sim::pipeline::Simulation;
use eov_sim::sim::{SimDuration, SimTime};

#[derive(Clone, Debug)]
struct Shape {
    peers: u32,
    observers: u32,
    clients: u32,
    orderers: u32,
    brokers: u32,
    tps: f64,
    jitter: f64,
    seed: u64,
}

fn shape() -> impl Strategy<Value = Shape> {
    (
        1u32..=5,
        0u32..=2,
        1u32..=4,
        1u32..=3,
        1u32..=4,
        20.0f64..300.0,
        0.0f64..0.5,
        any::<u64>(),
    )
        .prop_map(
            |(peers, observers, clients, orderers, brokers, tps, jitter, seed)| Shape {
                peers,
                observers,
                clients,
                orderers,
                brokers,
                tps: tps.round(),
                jitter,
                seed,
            },
        )
}

fn config(s: &Shape) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.topology.endorsing_peers = s.peers;
    c.topology.non_endorsing_peers = s.observers;
    c.topology.clients = s.clients;
    c.topology.orderers = s.orderers;
    c.topology.brokers = s.brokers;
    c.rate.total_tps = Some(s.tps);
    c.network.jitter_fraction = s.jitter;
    c.workload.n_accounts = 200;
    c.run.seed = s.seed;
    c.run.duration_us = 2_000_000;
    c.run.drain_us = 20_000_000;
    c
}

fn run(cfg: &ExperimentConfig) -> Simulation {
    let mut sim = Simulation::new(cfg).expect("valid config");
    sim.run();
    sim
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_hold_pipeline_invariants(s in shape()) {
        let cfg = config(&s);
        let sim = run(&cfg);
        let trace = sim.trace().unwrap().clone();
        prop_assert!(!trace.truncated);

        // Agreement and chain integrity on every peer.
        let reference = sim.committer(0).ledger();
        for c in sim.committers() {
            let l = c.ledger();
            prop_assert_eq!(l.next_height(), reference.next_height());
            prop_assert_eq!(l.history(), reference.history());
            for w in l.blocks().windows(2) {
                prop_assert_eq!(w[1].prev_hash, hash_block(&w[0]));
                prop_assert_eq!(w[1].height, w[0].height + 1);
            }
            for h in 1..l.next_height() {
                prop_assert_eq!(l.flags(h), reference.flags(h));
            }
        }

        // Client-side gate: nothing reaches a block without a satisfied policy.
        prop_assert_eq!(sim.committer(0).counts().policy_violation, 0);

        // Journey conservation and open-loop fidelity, per client.
        let client_cfg = ClientConfig {
            rate_tps: cfg.per_client_tps(),
            duration: cfg.duration(),
            endorse_timeout: SimDuration::from_micros(cfg.timeouts.endorse_timeout_us),
            broadcast_timeout: SimDuration::from_micros(cfg.timeouts.broadcast_timeout_us),
        };
        let journeys = sim.journeys();
        let mut per_client: BTreeMap<u32, Vec<_>> = BTreeMap::new();
        for j in &journeys {
            per_client.entry(j.client.0).or_default().push(j);
        }
        for (_, js) in per_client {
            prop_assert_eq!(js.len() as u32, client_cfg.planned());
            for (i, j) in js.iter().enumerate() {
                prop_assert_eq!(j.submit, SimTime::ZERO + client_cfg.offset(i as u32));
                prop_assert_ne!(j.status, TxnStatus::InFlight);
            }
        }

        // Enqueue counters.
        let fin = sim.enqueue_final();
        prop_assert!(fin.attempts >= fin.successes);
        if let Some(w) = sim.enqueue_at_window_end() {
            prop_assert!(w.attempts >= w.successes);
        }
        if fin.refusals == 0 {
            prop_assert_eq!(fin.attempts, fin.successes);
        }

        // Report consistency.
        let r = RunReport::of(&sim);
        prop_assert_eq!(r.status.settled_sum(), r.status.submitted);
        prop_assert_eq!(r.blocks.txns, r.status.committed + r.status.invalid_committed);
        prop_assert!(r.agreement.agreed);
    }

    #[test]
    fn same_seed_same_everything(s in shape()) {
        let cfg = config(&s);
        let (a, b) = (run(&cfg), run(&cfg));
        prop_assert_eq!(a.trace(), b.trace());
        prop_assert_eq!(a.journeys(), b.journeys());
        prop_assert_eq!(RunReport::of(&a).to_json_pretty(), RunReport::of(&b).to_json_pretty());
    }
}

/// With one endorser every proposal is endorsed, so the set of ordered
/// transactions must not depend on how many orderers proxy them.
#[test]
fn committed_multiset_is_independent_of_orderer_count() {
    let mut logs = Vec::new();
    for o in [1, 2, 3, 5] {
        let mut cfg = config(&Shape {
            peers: 1,
            observers: 0,
            clients: 3,
            orderers: o,
            brokers: 3,
            tps: 150.0,
            jitter: 0.2,
            seed: 11,
        });
        cfg.run.duration_us = 5_000_000;
        let sim = run(&cfg);
        let mut ids: Vec<TxnId> = sim
            .committer(0)
            .ledger()
            .blocks()
            .iter()
            .skip(1)
            .flat_map(|b| b.txns.iter().map(|e| e.txn_id))
            .collect();
        ids.sort();
        logs.push(ids);
    }
    assert_eq!(logs[0].len(), 750);
    assert!(logs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn different_seed_changes_jitter_not_invariants() {
    let mut cfg = config(&Shape {
        peers: 3,
        observers: 1,
        clients: 2,
        orderers: 2,
        brokers: 3,
        tps: 100.0,
        jitter: 0.3,
        seed: 1,
    });
    let a = run(&cfg);
    cfg.run.seed = 2;
    let b = run(&cfg);
    assert_ne!(a.trace().unwrap().digest, b.trace().unwrap().digest);
    for sim in [&a, &b] {
        let r = RunReport::of(sim);
        assert!(r.agreement.agreed);
        assert_eq!(r.status.settled_sum(), 200);
    }
}

#[test]
fn overloaded_orderer_refuses_and_ratio_exceeds_one() {
    let mut cfg = config(&Shape {
        peers: 2,
        observers: 0,
        clients: 4,
        orderers: 1,
        brokers: 3,
        tps: 400.0,
        jitter: 0.0,
        seed: 3,
    });
    cfg.replication.orderer_queue_capacity = 20;
    cfg.service.log_append_us = 4_000;
    let sim = run(&cfg);
    let fin = sim.enqueue_final();
    assert!(fin.refusals > 0);
    assert!(fin.ratio().unwrap() > 1.0);
    let r = RunReport::of(&sim);
    assert!(r.status.dropped_broadcast > 0);
    assert_eq!(r.status.settled_sum(), r.status.submitted);
    assert!(r.agreement.agreed);
}

#[test]
fn invalid_commits_carry_mvcc_flags_only() {
    let mut cfg = config(&Shape {
        peers: 2,
        observers: 0,
        clients: 4,
        orderers: 2,
        brokers: 3,
        tps: 200.0,
        jitter: 0.1,
        seed: 5,
    });
    cfg.workload.n_accounts = 5;
    let sim = run(&cfg);
    let l = sim.committer(0).ledger();
    let invalid: usize = (1..l.next_height())
        .flat_map(|h| l.flags(h).unwrap().to_vec())
        .filter(|f| *f != TxFlag::Valid)
        .inspect(|f| assert_eq!(*f, TxFlag::MvccConflict))
        .count();
    assert!(invalid > 0);
    assert_eq!(RunReport::of(&sim).status.invalid_committed, invalid as u64);
}
