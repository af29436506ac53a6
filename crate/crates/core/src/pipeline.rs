//! The simulated network: node layout, per-node CPU queues, and the
//! [`World`] that routes every message to the right state machine.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chaincode::generate_for;
use crate::committer::{genesis_block, gossip_targets, Committer};
use crate::config::{ConfigError, ExperimentConfig};
use crate::driver::{Client, ClientConfig, TxnJourney};
use crate::endorser::{EndorsementPolicy, Endorser};
use crate::ids::{ClientId, PeerId};
use crate::ledger::{hash_block, Block};
use crate::message::{Body, CommitEntry, Message, MessageSizes, Timer};
use crate::ordering::{BrokerIndex, CutStat, LeaderOutput, LeaderState, LogRecord, OrdererState, ReplicatedLog};
use crate::sim::{Engine, Event, NodeClass, NodeId, SimDuration, SimTime, TraceSummary, Traffic, World};

/// Dense node numbering: clients, endorsing peers, non-endorsing peers,
/// orderers, brokers.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub clients: u32,
    pub peers: u32,
    pub non_endorsing: u32,
    pub orderers: u32,
    pub brokers: u32,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Role {
    Client(u32),
    /// Endorsing peers first, then non-endorsing peers.
    Peer(u32),
    Orderer(u32),
    Broker(u32),
}

impl Layout {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let t = &cfg.topology;
        Layout {
            clients: t.clients,
            peers: t.endorsing_peers,
            non_endorsing: t.non_endorsing_peers,
            orderers: t.orderers,
            brokers: t.brokers,
        }
    }

    pub fn len(&self) -> u32 {
        self.clients + self.all_peers() + self.orderers + self.brokers
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_peers(&self) -> u32 {
        self.peers + self.non_endorsing
    }

    pub fn client(&self, i: u32) -> NodeId {
        NodeId(i)
    }

    /// Peer `i` in the combined peer numbering.
    pub fn peer(&self, i: u32) -> NodeId {
        NodeId(self.clients + i)
    }

    pub fn orderer(&self, i: u32) -> NodeId {
        NodeId(self.clients + self.all_peers() + i)
    }

    pub fn broker(&self, i: u32) -> NodeId {
        NodeId(self.clients + self.all_peers() + self.orderers + i)
    }

    pub fn role(&self, node: NodeId) -> Role {
        let mut i = node.0;
        if i < self.clients {
            return Role::Client(i);
        }
        i -= self.clients;
        if i < self.all_peers() {
            return Role::Peer(i);
        }
        i -= self.all_peers();
        if i < self.orderers {
            return Role::Orderer(i);
        }
        Role::Broker(i - self.orderers)
    }

    pub fn classes(&self) -> Vec<NodeClass> {
        (0..self.len())
            .map(|n| match self.role(NodeId(n)) {
                Role::Client(_) => NodeClass::Client,
                Role::Peer(_) => NodeClass::Peer,
                Role::Orderer(_) => NodeClass::Orderer,
                Role::Broker(_) => NodeClass::Broker,
            })
            .collect()
    }

    /// Endorsing peer that sends commit notices to `client`.
    pub fn home_peer(&self, client: u32) -> u32 {
        client % self.peers
    }

    /// Orderer receiving a client's `seq`-th envelope.
    pub fn orderer_for(&self, client: u32, seq: u32) -> u32 {
        ((u64::from(client) + u64::from(seq)) % u64::from(self.orderers)) as u32
    }

    pub fn label(&self, node: NodeId) -> String {
        match self.role(node) {
            Role::Client(i) => format!("client{i}"),
            Role::Peer(i) if i < self.peers => format!("peer{i}"),
            Role::Peer(i) => format!("observer{}", i - self.peers),
            Role::Orderer(i) => format!("orderer{i}"),
            Role::Broker(i) => format!("broker{i}"),
        }
    }
}

/// Single FIFO server; work starts when the previous job finishes.
#[derive(Copy, Clone, Debug, Default)]
struct Cpu {
    free_at: SimTime,
    busy_us: u64,
}

impl Cpu {
    fn admit(&mut self, now: SimTime, cost_us: u64) -> SimTime {
        let start = now.max(self.free_at);
        self.free_at = start + SimDuration::from_micros(cost_us);
        self.busy_us += cost_us;
        self.free_at
    }
}

struct PeerNode {
    endorser: Option<Endorser>,
    committer: Committer,
    cpu: Cpu,
    gossip_to: Vec<u32>,
    endorsements: u64,
    refusals: u64,
}

struct OrdererNode {
    state: OrdererState,
    cpu: Cpu,
}

/// Enqueue-attempt and success counts summed over all orderers.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnqueueCounters {
    pub attempts: u64,
    pub successes: u64,
    pub refusals: u64,
}

impl EnqueueCounters {
    /// `attempts / successes`; undefined before the first success.
    pub fn ratio(&self) -> Option<f64> {
        (self.successes > 0).then(|| self.attempts as f64 / self.successes as f64)
    }
}

/// Per-peer end state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerEnd {
    pub label: String,
    pub height: u64,
    pub tip_hash: String,
    pub state_digest: String,
    pub duplicates: u64,
    pub cpu_busy_us: u64,
}

struct Net {
    layout: Layout,
    sizes: MessageSizes,
    cfg: Arc<ExperimentConfig>,
    clients: Vec<Client>,
    peers: Vec<PeerNode>,
    orderers: Vec<OrdererNode>,
    broker_cpu: Vec<Cpu>,
    leader: LeaderState,
    snapshot: Option<EnqueueCounters>,
    log_unavailable: u64,
}

/// One configured run: engine plus all node state.
pub struct Simulation {
    engine: Engine<Message>,
    net: Net,
    trace: Option<TraceSummary>,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let cfg = Arc::new(cfg.clone());
        let layout = Layout::from_config(&cfg);
        let engine = Engine::new(cfg.run.seed, cfg.network.latency_model(), layout.classes());

        let endorsing: Vec<PeerId> = (0..layout.peers).map(PeerId).collect();
        let policy =
            Arc::new(EndorsementPolicy::new(endorsing, cfg.policy_threshold() as usize).expect("validated threshold"));
        let genesis = genesis_block();
        let initial = cfg.workload.initial_write_set();

        let client_cfg = ClientConfig {
            rate_tps: cfg.per_client_tps(),
            duration: cfg.duration(),
            endorse_timeout: SimDuration::from_micros(cfg.timeouts.endorse_timeout_us),
            broadcast_timeout: SimDuration::from_micros(cfg.timeouts.broadcast_timeout_us),
        };
        let planned = client_cfg.planned() as usize;
        let clients = (0..layout.clients)
            .map(|c| {
                let id = ClientId(c);
                let props = generate_for(&cfg.workload, id, planned);
                Client::new(id, client_cfg.clone(), policy.clone(), SimTime::ZERO, props)
            })
            .collect();

        let peers = (0..layout.all_peers())
            .map(|p| {
                let endorsing = p < layout.peers;
                PeerNode {
                    endorser: endorsing.then(|| Endorser::new(PeerId(p))),
                    committer: Committer::new(PeerId(p), policy.clone(), genesis.clone(), &initial),
                    cpu: Cpu::default(),
                    gossip_to: if endorsing {
                        gossip_targets(p, layout.peers, layout.non_endorsing)
                    } else {
                        Vec::new()
                    },
                    endorsements: 0,
                    refusals: 0,
                }
            })
            .collect();

        let tip = hash_block(&genesis);
        let orderers = (0..layout.orderers)
            .map(|o| OrdererNode {
                state: OrdererState::new(
                    o,
                    layout.orderers,
                    cfg.replication.orderer_queue_capacity as usize,
                    1,
                    tip,
                ),
                cpu: Cpu::default(),
            })
            .collect();

        let log = ReplicatedLog::new(layout.brokers, cfg.replication_factor(), cfg.min_insync());
        let net = Net {
            layout,
            sizes: cfg.sizes.clone(),
            clients,
            peers,
            orderers,
            broker_cpu: vec![Cpu::default(); layout.brokers as usize],
            leader: LeaderState::new(log, cfg.cutter.clone()),
            snapshot: None,
            log_unavailable: 0,
            cfg,
        };
        Ok(Simulation {
            engine,
            net,
            trace: None,
        })
    }

    /// Runs until quiescence or `duration + drain`.
    pub fn run(&mut self) -> TraceSummary {
        if let Some(t) = &self.trace {
            return t.clone();
        }
        let layout = self.net.layout;
        for c in &self.net.clients {
            if let Some(at) = c.first_submit() {
                self.engine
                    .schedule_at(layout.client(c.id().0), Message::timer(Timer::Submit), at)
                    .expect("client node exists");
            }
        }
        let window_end = SimTime::ZERO + self.net.cfg.duration();
        self.engine
            .schedule_at(layout.orderer(0), Message::timer(Timer::Snapshot), window_end)
            .expect("orderer node exists");
        let limit = window_end + SimDuration::from_micros(self.net.cfg.run.drain_us);
        let trace = self.engine.run_until_quiescent(&mut self.net, limit);
        self.trace = Some(trace.clone());
        trace
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.net.cfg
    }

    pub fn layout(&self) -> Layout {
        self.net.layout
    }

    pub fn trace(&self) -> Option<&TraceSummary> {
        self.trace.as_ref()
    }

    /// All journeys ordered by client, then sequence.
    pub fn journeys(&self) -> Vec<TxnJourney> {
        self.net
            .clients
            .iter()
            .flat_map(|c| c.journeys().iter().cloned())
            .collect()
    }

    /// Committers of all peers, endorsing first.
    pub fn committers(&self) -> impl Iterator<Item = &Committer> {
        self.net.peers.iter().map(|p| &p.committer)
    }

    pub fn committer(&self, peer: u32) -> &Committer {
        &self.net.peers[peer as usize].committer
    }

    pub fn peer_ends(&self) -> Vec<PeerEnd> {
        self.net
            .peers
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let l = p.committer.ledger();
                PeerEnd {
                    label: self.net.layout.label(self.net.layout.peer(i as u32)),
                    height: l.next_height() - 1,
                    tip_hash: l.tip_hash().to_string(),
                    state_digest: l.state().digest().to_string(),
                    duplicates: p.committer.duplicates(),
                    cpu_busy_us: p.cpu.busy_us,
                }
            })
            .collect()
    }

    pub fn enqueue_final(&self) -> EnqueueCounters {
        self.net.enqueue_counters()
    }

    /// Counters captured at the end of the submission phase.
    pub fn enqueue_at_window_end(&self) -> Option<EnqueueCounters> {
        self.net.snapshot
    }

    pub fn orderer_states(&self) -> impl Iterator<Item = &OrdererState> {
        self.net.orderers.iter().map(|o| &o.state)
    }

    pub fn cuts(&self) -> &[CutStat] {
        self.net.leader.cuts()
    }

    pub fn log_unavailable(&self) -> u64 {
        self.net.log_unavailable
    }

    pub fn endorse_refusals(&self) -> u64 {
        self.net.peers.iter().map(|p| p.refusals).sum()
    }

    pub fn endorsements_issued(&self) -> u64 {
        self.net.peers.iter().map(|p| p.endorsements).sum()
    }

    /// `(label, class, counters)` per node.
    pub fn traffic(&self) -> Vec<(String, NodeClass, Traffic)> {
        let l = self.net.layout;
        self.engine
            .traffic()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let n = NodeId(i as u32);
                (l.label(n), self.engine.class_of(n), *t)
            })
            .collect()
    }
}

impl Net {
    fn enqueue_counters(&self) -> EnqueueCounters {
        let mut c = EnqueueCounters::default();
        for o in &self.orderers {
            c.attempts += o.state.attempts();
            c.successes += o.state.successes();
            c.refusals += o.state.refusals();
        }
        c
    }

    fn send(&self, engine: &mut Engine<Message>, src: NodeId, dst: NodeId, body: Body, size: u32) {
        engine
            .send(src, dst, Message { body, size })
            .expect("layout addresses are valid");
    }

    fn cost_of(&self, role: Role, body: &Body) -> u64 {
        let s = &self.cfg.service;
        match (role, body) {
            (Role::Peer(_), Body::Proposal(_)) => s.endorse_us,
            (Role::Orderer(_), Body::Envelope(_)) => s.orderer_envelope_us,
            (Role::Broker(_), Body::LogAppend { .. }) => s.log_append_us,
            _ => 0,
        }
    }

    fn cpu(&mut self, role: Role) -> Option<&mut Cpu> {
        match role {
            Role::Peer(p) => Some(&mut self.peers[p as usize].cpu),
            Role::Orderer(o) => Some(&mut self.orderers[o as usize].cpu),
            Role::Broker(b) => Some(&mut self.broker_cpu[b as usize]),
            Role::Client(_) => None,
        }
    }

    fn on_client(&mut self, engine: &mut Engine<Message>, c: u32, body: Body) {
        let now = engine.now();
        let l = self.layout;
        let me = l.client(c);
        match body {
            Body::Timer(Timer::Submit) => {
                let Some(sub) = self.clients[c as usize].submit_next(now) else {
                    return;
                };
                let size = self.sizes.proposal;
                for p in 0..l.peers {
                    self.send(engine, me, l.peer(p), Body::Proposal(sub.proposal.clone()), size);
                }
                let seq = sub.proposal.txn_id.seq;
                let timeout = self.clients[c as usize].config().endorse_timeout;
                engine
                    .schedule(me, Message::timer(Timer::EndorseTimeout(seq)), timeout)
                    .expect("client exists");
                if let Some(at) = sub.next_at {
                    engine
                        .schedule_at(me, Message::timer(Timer::Submit), at)
                        .expect("client exists");
                }
            }
            Body::Endorsement(e) => {
                if let Some(env) = self.clients[c as usize].on_endorsement(&e, now) {
                    let seq = env.txn_id.seq;
                    let size = self.sizes.envelope(&env);
                    let o = l.orderer(l.orderer_for(c, seq));
                    self.send(engine, me, o, Body::Envelope(env), size);
                    let timeout = self.clients[c as usize].config().broadcast_timeout;
                    engine
                        .schedule(me, Message::timer(Timer::BroadcastTimeout(seq)), timeout)
                        .expect("client exists");
                }
            }
            Body::Refusal(_) => self.clients[c as usize].on_refusal(),
            Body::BroadcastAck(txn) => self.clients[c as usize].on_broadcast_ack(txn, now),
            Body::CommitNotice { committed_at, entries } => {
                for e in entries {
                    self.clients[c as usize].on_commit(e, committed_at);
                }
            }
            Body::Timer(Timer::EndorseTimeout(seq)) => self.clients[c as usize].on_endorse_timeout(seq),
            Body::Timer(Timer::BroadcastTimeout(seq)) => self.clients[c as usize].on_broadcast_timeout(seq),
            other => unreachable!("client got {other:?}"),
        }
    }

    fn on_peer(&mut self, engine: &mut Engine<Message>, p: u32, body: Body) {
        let now = engine.now();
        let l = self.layout;
        let me = l.peer(p);
        match body {
            Body::Proposal(prop) => {
                let peer = &mut self.peers[p as usize];
                let endorser = peer.endorser.as_ref().expect("proposals go to endorsing peers");
                let dst = l.client(prop.client.0);
                match endorser.endorse(&prop, peer.committer.state(), now) {
                    Ok(e) => {
                        peer.endorsements += 1;
                        let size = self.sizes.endorsement(&e);
                        self.send(engine, me, dst, Body::Endorsement(Arc::new(e)), size);
                    }
                    Err(r) => {
                        peer.refusals += 1;
                        self.send(engine, me, dst, Body::Refusal(r), self.sizes.ack);
                    }
                }
            }
            Body::BlockDeliver(b) | Body::GossipBlock(b) => {
                self.peers[p as usize].committer.receive(b);
                self.start_validation(engine, p);
            }
            Body::Timer(Timer::ValidateDone) => {
                let committed = self.peers[p as usize]
                    .committer
                    .commit_taken()
                    .unwrap_or_else(|e| panic!("peer {p}: chain integrity violated: {e}"));
                if p < l.peers {
                    self.notify_clients(engine, p, &committed.block, &committed.flags);
                    let targets = self.peers[p as usize].gossip_to.clone();
                    if !targets.is_empty() {
                        let size = self.sizes.block(&committed.block);
                        for j in targets {
                            let dst = l.peer(l.peers + j);
                            self.send(engine, me, dst, Body::GossipBlock(committed.block.clone()), size);
                        }
                    }
                }
                self.start_validation(engine, p);
            }
            other => unreachable!("peer got {other:?}"),
        }
    }

    fn start_validation(&mut self, engine: &mut Engine<Message>, p: u32) {
        let now = engine.now();
        let s = &self.cfg.service;
        let peer = &mut self.peers[p as usize];
        let Some(block) = peer.committer.take_ready() else {
            return;
        };
        let sigs: u64 = block.txns.iter().map(|e| e.endorsements.len() as u64).sum();
        let cost = s.validate_per_txn_us * block.txns.len() as u64 + s.validate_per_endorsement_us * sigs;
        let done = peer.cpu.admit(now, cost);
        engine
            .schedule_at(self.layout.peer(p), Message::timer(Timer::ValidateDone), done)
            .expect("peer exists");
    }

    fn notify_clients(&self, engine: &mut Engine<Message>, p: u32, block: &Block, flags: &[crate::ledger::TxFlag]) {
        let l = self.layout;
        let mut per_client: BTreeMap<u32, Vec<CommitEntry>> = BTreeMap::new();
        for (env, &flag) in block.txns.iter().zip(flags) {
            let c = env.client.0;
            if c < l.clients && l.home_peer(c) == p {
                per_client.entry(c).or_default().push(CommitEntry {
                    seq: env.txn_id.seq,
                    flag,
                });
            }
        }
        let now = engine.now();
        for (c, entries) in per_client {
            let size = self.sizes.notice(entries.len());
            let body = Body::CommitNotice {
                committed_at: now,
                entries,
            };
            self.send(engine, l.peer(p), l.client(c), body, size);
        }
    }

    fn on_orderer(&mut self, engine: &mut Engine<Message>, o: u32, body: Body) {
        let l = self.layout;
        let me = l.orderer(o);
        match body {
            Body::Envelope(env) => {
                if self.orderers[o as usize].state.broadcast() == crate::ordering::Broadcast::Forward {
                    let bytes = self.sizes.envelope(&env);
                    let record = LogRecord {
                        origin: o,
                        env,
                        bytes: u64::from(bytes),
                    };
                    let size = self.sizes.log_record(&record);
                    self.send(engine, me, l.broker(0), Body::LogAppend { offset: None, record }, size);
                }
            }
            Body::LogDeliver(entries) => {
                let out = self.orderers[o as usize].state.on_log_entries(&entries);
                for (client, txn) in out.acks {
                    self.send(engine, me, l.client(client.0), Body::BroadcastAck(txn), self.sizes.ack);
                }
                for block in out.fan_out {
                    let size = self.sizes.block(&block);
                    for p in 0..l.peers {
                        self.send(engine, me, l.peer(p), Body::BlockDeliver(block.clone()), size);
                    }
                }
            }
            Body::Timer(Timer::Snapshot) => self.snapshot = Some(self.enqueue_counters()),
            other => unreachable!("orderer got {other:?}"),
        }
    }

    fn on_broker(&mut self, engine: &mut Engine<Message>, b: u32, body: Body) {
        let now = engine.now();
        let l = self.layout;
        let me = l.broker(b);
        match body {
            Body::LogAppend { offset: None, record } => {
                debug_assert_eq!(b, 0, "appends go to the leader");
                match self.leader.append(record, now) {
                    Ok(out) => self.apply_leader(engine, out),
                    Err(_) => self.log_unavailable += 1,
                }
            }
            Body::LogAppend {
                offset: Some(offset), ..
            } => {
                self.send(
                    engine,
                    me,
                    l.broker(0),
                    Body::LogAck { broker: b, offset },
                    self.sizes.ack,
                );
            }
            Body::LogAck { broker, offset } => {
                let out = self.leader.ack(broker as BrokerIndex, offset, now);
                self.apply_leader(engine, out);
            }
            Body::Timer(Timer::CutTimeout(batch)) => {
                let out = self.leader.on_cut_timer(batch, now);
                self.apply_leader(engine, out);
            }
            other => unreachable!("broker got {other:?}"),
        }
    }

    fn apply_leader(&mut self, engine: &mut Engine<Message>, out: LeaderOutput) {
        let l = self.layout;
        let leader = l.broker(0);
        if let Some(offset) = out.offset {
            if !out.followers.is_empty() {
                let record = self.leader.record(offset).expect("just appended").clone();
                let size = self.sizes.log_record(&record);
                for f in out.followers {
                    let body = Body::LogAppend {
                        offset: Some(offset),
                        record: record.clone(),
                    };
                    self.send(engine, leader, l.broker(f), body, size);
                }
            }
        }
        if !out.deliver.is_empty() {
            let size = self.sizes.log_entries(&out.deliver);
            let entries = Arc::new(out.deliver);
            for o in 0..l.orderers {
                self.send(engine, leader, l.orderer(o), Body::LogDeliver(entries.clone()), size);
            }
        }
        for t in out.timers {
            engine
                .schedule_at(leader, Message::timer(Timer::CutTimeout(t.batch)), t.at)
                .expect("leader exists");
        }
    }
}

impl World<Message> for Net {
    fn dispatch(&mut self, event: Event<Message>, engine: &mut Engine<Message>) {
        let role = self.layout.role(event.target);
        let body = match event.payload.body {
            Body::Serviced(inner) => *inner,
            body => {
                let cost = self.cost_of(role, &body);
                if cost > 0 {
                    let now = engine.now();
                    let done = self.cpu(role).expect("costed work runs on a server").admit(now, cost);
                    engine
                        .schedule_at(event.target, Message::local(Body::Serviced(Box::new(body))), done)
                        .expect("target exists");
                    return;
                }
                body
            }
        };
        match role {
            Role::Client(c) => self.on_client(engine, c, body),
            Role::Peer(p) => self.on_peer(engine, p, body),
            Role::Orderer(o) => self.on_orderer(engine, o, body),
            Role::Broker(b) => self.on_broker(engine, b, body),
        }
    }
}
