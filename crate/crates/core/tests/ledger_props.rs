use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use eov_sim::chaincode::{generate_for, OpKind, OpMix, Proposal, WorkloadConfig};
use eov_sim::committer::{genesis_block, Committer};
use eov_sim::endorser::{policy_satisfied, Endorsement, EndorsementPolicy, Endorser};
use eov_sim::ids::{ClientId, PeerId};
use eov_sim::ledger::{hash_block, Block, CutReason, Key, StateView, TxFlag, Version, WorldState};
use eov_sim::ordering::Envelope;
use eov_sim::sim::SimTime;

const PEERS: u32 = 3;

fn workload(accounts: u32, seed: u64, transfers_only: bool) -> WorkloadConfig {
    let mut w = WorkloadConfig {
        n_accounts: accounts,
        seed,
        ..WorkloadConfig::default()
    };
    if transfers_only {
        let mut mix = OpMix::only(OpKind::SendPayment);
        *mix.weight_mut(OpKind::SendPayment) = 0.5;
        *mix.weight_mut(OpKind::Amalgamate) = 0.5;
        w.op_mix = mix;
    }
    w
}

fn endorse_all(endorsers: &[Endorser], proposal: &Proposal, state: &WorldState) -> Vec<Endorsement> {
    endorsers
        .iter()
        .map(|e| e.endorse(proposal, state, SimTime::ZERO).expect("authorized"))
        .collect()
}

/// Builds a chain where each block is endorsed against the state of
/// `lag` blocks ago, so stale reads produce MVCC conflicts.
fn build_chain(w: &WorkloadConfig, sizes: &[usize], lag: usize) -> Vec<Arc<Block>> {
    let policy = Arc::new(EndorsementPolicy::all_of((0..PEERS).map(PeerId)).unwrap());
    let endorsers: Vec<Endorser> = (0..PEERS).map(|p| Endorser::new(PeerId(p))).collect();
    let mut reference = Committer::new(PeerId(0), policy, genesis_block(), &w.initial_write_set());
    let mut snapshots = vec![reference.state().clone()];
    let total: usize = sizes.iter().sum();
    let mut proposals = generate_for(w, ClientId(0), total).into_iter();
    let mut chain = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let snapshot = &snapshots[snapshots.len().saturating_sub(1 + lag)];
        let txns = proposals
            .by_ref()
            .take(n)
            .map(|p| {
                Arc::new(Envelope {
                    txn_id: p.txn_id,
                    endorsements: endorse_all(&endorsers, &p, snapshot),
                    client: p.client,
                    broadcast_at: SimTime::ZERO,
                    proposal: Arc::new(p),
                })
            })
            .collect();
        let block = Arc::new(Block {
            height: i as u64 + 1,
            prev_hash: reference.ledger().tip_hash(),
            txns,
            cut_reason: CutReason::CountThreshold,
            created_at: SimTime::ZERO,
        });
        reference.receive(block.clone());
        reference.drain_ready().expect("extends");
        snapshots.push(reference.state().clone());
        chain.push(block);
    }
    chain
}

fn delivery_orders(blocks: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(Just((0..blocks).collect::<Vec<_>>()).prop_shuffle(), PEERS as usize)
}

fn chain_params() -> impl Strategy<Value = (u32, u64, Vec<usize>, usize, bool)> {
    (
        2u32..30,
        any::<u64>(),
        prop::collection::vec(1usize..25, 1..12),
        0usize..3,
        any::<bool>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn peers_converge_under_any_delivery_order(
        ((accounts, seed, sizes, lag, transfers), orders) in chain_params()
            .prop_flat_map(|p| { let n = p.2.len(); (Just(p), delivery_orders(n)) }),
    ) {
        let w = workload(accounts, seed, transfers);
        let chain = build_chain(&w, &sizes, lag);
        let policy = Arc::new(EndorsementPolicy::all_of((0..PEERS).map(PeerId)).unwrap());
        let mut peers: Vec<Committer> = (0..PEERS)
            .map(|p| Committer::new(PeerId(p), policy.clone(), genesis_block(), &w.initial_write_set()))
            .collect();

        for (peer, order) in peers.iter_mut().zip(orders) {
            let mut versions: BTreeMap<Key, Version> =
                peer.state().iter().map(|(k, (_, v))| (*k, *v)).collect();
            for i in order {
                prop_assert!(peer.receive(chain[i].clone()));
                peer.drain_ready().expect("extends");
                let tip = peer.ledger().tip_height().unwrap();
                for (k, (_, v)) in peer.state().iter() {
                    if let Some(prev) = versions.get(k) {
                        prop_assert!(v >= prev, "version of {} went back", k);
                    }
                    prop_assert!(*v <= Version::new(tip, u32::MAX));
                }
                prop_assert!(versions.keys().all(|k| peer.state().read_state(k).is_some()));
                versions = peer.state().iter().map(|(k, (_, v))| (*k, *v)).collect();
            }
            // Redelivery is ignored.
            prop_assert!(!peer.receive(chain[0].clone()));
            prop_assert_eq!(peer.buffered(), 0);
            prop_assert_eq!(peer.state().digest(), peer.state().recompute_digest());
        }

        let l0 = peers[0].ledger();
        prop_assert_eq!(l0.next_height(), chain.len() as u64 + 1);
        for w in l0.blocks().windows(2) {
            prop_assert_eq!(w[1].prev_hash, hash_block(&w[0]));
        }
        for p in &peers[1..] {
            prop_assert_eq!(p.ledger().history(), l0.history());
            prop_assert_eq!(p.counts(), peers[0].counts());
        }
        if lag == 0 {
            // Endorsed on the tip, so only intra-block races can conflict.
            for h in 1..l0.next_height() {
                prop_assert_eq!(l0.flags(h).unwrap()[0], TxFlag::Valid);
            }
        }
        prop_assert_eq!(peers[0].counts().policy_violation, 0);
        if transfers {
            let total: i64 = peers[0].state().iter().map(|(_, (v, _))| *v).sum();
            prop_assert_eq!(total, i64::from(accounts) * (w.initial_checking + w.initial_savings));
        }
    }

    #[test]
    fn endorsement_reflects_committed_state(
        (accounts, seed, sizes, _lag, transfers) in chain_params(),
        tamper in any::<i64>(),
    ) {
        let w = workload(accounts, seed, transfers);
        let chain = build_chain(&w, &sizes, 0);
        let policy = EndorsementPolicy::all_of((0..PEERS).map(PeerId)).unwrap();
        let endorsers: Vec<Endorser> = (0..PEERS).map(|p| Endorser::new(PeerId(p))).collect();
        let mut peers: Vec<Committer> = (0..PEERS)
            .map(|p| Committer::new(PeerId(p), Arc::new(policy.clone()), genesis_block(), &w.initial_write_set()))
            .collect();
        for b in &chain {
            for p in &mut peers {
                p.receive(b.clone());
                p.drain_ready().unwrap();
            }
        }
        for prop in generate_for(&w, ClientId(1), 20) {
            let ends: Vec<Endorsement> = endorsers
                .iter()
                .zip(&peers)
                .map(|(e, p)| e.endorse(&prop, p.state(), SimTime::ZERO).unwrap())
                .collect();
            for e in &ends {
                prop_assert!(e.stamp_is_valid());
                prop_assert!(e.matches(&ends[0]));
                let again = endorsers[0].endorse(&prop, peers[0].state(), SimTime::from_micros(5)).unwrap();
                prop_assert!(again.matches(e));
                for (k, v) in &e.read_set.0 {
                    prop_assert_eq!(*v, peers[0].state().read_state(k).map(|x| x.1));
                }
            }
            prop_assert!(policy_satisfied(&policy, &ends).unwrap().satisfied);

            if let Some(slot) = ends[0].write_set.0.first() {
                let mut bad = ends.clone();
                bad[0].write_set.0[0].1 = slot.1.wrapping_add(tamper | 1);
                prop_assert!(!bad[0].stamp_is_valid());
                prop_assert!(!policy_satisfied(&policy, &bad).unwrap().satisfied);
            }
        }
    }
}
