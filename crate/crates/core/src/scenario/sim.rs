//! One load level of a scenario on a fresh simulated network.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::json;

use super::config::{ScenarioConfig, Step, TargetNode};
use super::fixture::Fixture;
use super::metrics::{percentile, BusyFractions, LevelMetrics};
use super::ScenarioError;
use crate::chaincode::{register_certificate, verify_certificate, ChaincodeContext, VerifyOutcome};
use crate::credential::{generate_did, hash_credential, issue_credential, CertificateHash, VaccineInfo, ONE_YEAR_SECONDS};
use crate::encoding::{Digest, Encoder};
use crate::ledger::{Block, Ledger, MemberStateId, Transaction};
use crate::netsim::{
    BatchServer, EventQueue, FifoServer, HostId, MessageKind, Network, ServiceTimeProfile, SimMessage, SimTime,
    Topology, TraceRecord,
};
use crate::ordering::{seal_block, Envelope, InstanceStatus, OrderingCluster, Role, SubmitOutcome};
use crate::workload::generate_arrivals;

const GOSSIP_FANOUT: usize = 3;
const PEERS: usize = 27;

#[derive(Debug, Clone)]
enum Payload {
    Request(usize),
    Envelope(usize),
    ToBroker(usize),
    Replica(usize, usize),
    ReplicaAck(usize),
    Block(Arc<Block>),
    Response(usize, bool),
    Background,
}

#[derive(Debug)]
enum Ev {
    Client(usize),
    Deliver(SimMessage, Payload),
    RestDone(usize),
    Endorsed(usize),
    Sequenced(usize, usize),
    Brokered(usize, usize),
    CutTimer,
    CommitWake(usize),
    CommitDone(usize, Vec<Arc<Block>>),
    QueryWake(usize),
    QueryDone(usize, Vec<usize>),
    Fault(usize),
    Gossip,
    Heartbeat,
    Sample,
}

struct Request {
    start: SimTime,
    peer: usize,
    hash: CertificateHash,
    done: Option<SimTime>,
    ok: bool,
    leader: usize,
}

/// Output of one level.
pub struct LevelRun {
    pub metrics: LevelMetrics,
    pub trace: Option<Vec<TraceRecord>>,
    pub ledger: Option<Ledger>,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    fx: &'a Fixture,
    p: &'a ServiceTimeProfile,
    tps: f64,
    end: SimTime,
    net: Network,
    cluster: OrderingCluster,
    ledgers: Vec<Ledger>,
    endorsers: Vec<FifoServer>,
    committers: Vec<BatchServer<Arc<Block>>>,
    statedb: Vec<BatchServer<usize>>,
    sequencers: Vec<FifoServer>,
    brokers: Vec<FifoServer>,
    requests: Vec<Request>,
    tx_index: HashMap<Digest, usize>,
    pending_tx: HashMap<usize, Arc<Transaction>>,
    acks_pending: HashMap<usize, usize>,
    tip: Option<(u64, Digest)>,
    sealed: Vec<Arc<Block>>,
    peer_next: Vec<u64>,
    peer_buffer: Vec<BTreeMap<u64, Arc<Block>>>,
    cut_timer: Option<SimTime>,
    sent: usize,
    finished: usize,
    samples: Vec<(f64, f64)>,
    last_event: SimTime,
    chaincode_errors: usize,
}

fn level_seed(seed: u64, step: Step, tps: f64) -> u64 {
    let mut e = Encoder::tagged("vaxledger/level-seed/v1");
    e.put_u64(seed).put_str(step.as_str()).put_u64(tps.to_bits());
    u64::from_be_bytes(e.digest().0[..8].try_into().expect("8 bytes"))
}

pub fn run_level(
    cfg: &ScenarioConfig,
    fx: &Fixture,
    tps: f64,
    trace: bool,
    keep_ledger: bool,
) -> Result<LevelRun, ScenarioError> {
    let topology = Topology::new(cfg.link).map_err(|e| ScenarioError::Config(e.to_string()))?;
    let cluster = OrderingCluster::new(cfg.batch).map_err(|e| ScenarioError::Config(e.to_string()))?;
    let arrivals = generate_arrivals(tps, cfg.duration_seconds, cfg.arrival_mode, level_seed(cfg.seed, cfg.step, tps))
        .map_err(|e| ScenarioError::Config(e.to_string()))?
        .arrivals;
    let p = &cfg.service_profile;
    let qi = SimTime::from_millis_f64(p.query_batch_interval_ms);
    let ci = SimTime::from_millis_f64(p.commit_batch_interval_ms);
    let ledgers = match cfg.step {
        Step::Register => vec![fx.genesis.clone(); PEERS],
        Step::Verify => {
            // Verification never changes state; peers share nothing so only the
            // targets need a copy, but indices stay aligned.
            (0..PEERS)
                .map(|i| {
                    if cfg.target == TargetNode::Spread || i == 0 {
                        fx.genesis.clone()
                    } else {
                        Ledger::new(Default::default())
                    }
                })
                .collect()
        }
    };
    let mut rng = ChaCha20Rng::seed_from_u64(level_seed(cfg.seed ^ 0x5eed, cfg.step, tps));
    let requests = arrivals
        .iter()
        .enumerate()
        .map(|(i, at)| {
            let peer = match cfg.target {
                TargetNode::Single => 0,
                TargetNode::Spread => i % PEERS,
            };
            let hash = match cfg.step {
                Step::Register => CertificateHash::from(Digest::ZERO),
                Step::Verify if fx.preloaded.is_empty() => {
                    CertificateHash::from(Digest::of(&(i as u64).to_be_bytes()))
                }
                Step::Verify => fx.preloaded[rng.gen_range(0..fx.preloaded.len())],
            };
            Request {
                start: *at,
                peer,
                hash,
                done: None,
                ok: false,
                leader: 0,
            }
        })
        .collect();

    let mut sim = Sim {
        cfg,
        fx,
        p,
        tps,
        end: SimTime::from_secs_f64(cfg.duration_seconds),
        net: Network::new(topology, trace),
        cluster,
        ledgers,
        endorsers: vec![FifoServer::default(); PEERS],
        committers: (0..PEERS).map(|_| BatchServer::new(ci)).collect(),
        statedb: (0..PEERS).map(|_| BatchServer::new(qi)).collect(),
        sequencers: vec![FifoServer::default(); Role::Sequencer.cardinality()],
        brokers: vec![FifoServer::default(); Role::Broker.cardinality()],
        requests,
        tx_index: HashMap::new(),
        pending_tx: HashMap::new(),
        acks_pending: HashMap::new(),
        tip: fx.genesis.chain().tip_hash().map(|h| (fx.genesis.height() - 1, h)),
        sealed: Vec::new(),
        peer_next: vec![fx.genesis.height(); PEERS],
        peer_buffer: vec![BTreeMap::new(); PEERS],
        cut_timer: None,
        sent: 0,
        finished: 0,
        samples: Vec::new(),
        last_event: SimTime::ZERO,
        chaincode_errors: 0,
    };

    let mut q = EventQueue::new();
    for (i, f) in cfg.fault_schedule.iter().enumerate() {
        q.schedule(SimTime::from_millis_f64(f.at_ms), Ev::Fault(i)).expect("future");
    }
    for (i, r) in sim.requests.iter().enumerate() {
        q.schedule(r.start, Ev::Client(i)).expect("future");
    }
    if p.gossip_interval_ms > 0.0 {
        q.schedule(SimTime::from_millis_f64(p.gossip_interval_ms), Ev::Gossip).expect("future");
    }
    if p.heartbeat_interval_ms > 0.0 {
        q.schedule(SimTime::from_millis_f64(p.heartbeat_interval_ms), Ev::Heartbeat)
            .expect("future");
    }
    q.schedule(SimTime::from_secs(1), Ev::Sample).expect("future");

    let horizon = sim.end + SimTime::from_secs_f64(cfg.drain_seconds);
    while let Some((now, ev)) = q.pop_until(horizon) {
        sim.last_event = now;
        sim.handle(&mut q, now, ev)?;
    }

    let metrics = sim.metrics();
    let ledger = if keep_ledger {
        Some(sim.ledgers.swap_remove(sim.report_peer()))
    } else {
        None
    };
    Ok(LevelRun {
        metrics,
        trace: sim.net.trace().map(<[TraceRecord]>::to_vec),
        ledger,
    })
}

impl Sim<'_> {
    fn peer_host(&self, i: usize) -> HostId {
        self.net.topology.peer(MemberStateId::from_index(i))
    }

    #[allow(clippy::too_many_arguments)]
    fn send(&mut self, q: &mut EventQueue<Ev>, now: SimTime, src: HostId, dst: HostId, size: u64, kind: MessageKind, payload: Payload) {
        let msg = SimMessage { src, dst, size, kind };
        let at = self.net.send(now, &msg);
        q.schedule(at, Ev::Deliver(msg, payload)).expect("delivery is in the future");
    }

    fn assigned_sequencer(&self, peer: usize) -> Option<usize> {
        let up = self.cluster.up_instances(Role::Sequencer);
        (!up.is_empty()).then(|| up[peer % up.len()])
    }

    fn leader_broker(&self) -> Option<usize> {
        self.cluster.up_instances(Role::Broker).first().copied()
    }

    fn is_up(&self, role: Role, i: usize) -> bool {
        self.cluster.status(role)[i] == InstanceStatus::Up
    }

    fn fail(&mut self, q: &mut EventQueue<Ev>, now: SimTime, from: HostId, req: usize) {
        let client = self.net.topology.client();
        let size = self.p.ack_bytes;
        self.send(q, now, from, client, size, MessageKind::Response, Payload::Response(req, false));
    }

    fn report_peer(&self) -> usize {
        self.requests.first().map_or(0, |r| r.peer)
    }

    fn handle(&mut self, q: &mut EventQueue<Ev>, now: SimTime, ev: Ev) -> Result<(), ScenarioError> {
        match ev {
            Ev::Client(r) => {
                self.sent += 1;
                let peer = self.peer_host(self.requests[r].peer);
                let client = self.net.topology.client();
                let (size, kind) = match self.cfg.step {
                    Step::Register => (self.p.request_bytes, MessageKind::Proposal),
                    Step::Verify => (self.p.query_bytes, MessageKind::Query),
                };
                self.send(q, now, client, peer, size, kind, Payload::Request(r));
            }
            Ev::Deliver(msg, payload) => {
                self.net.deliver(now, &msg);
                self.on_deliver(q, now, msg, payload)?;
            }
            Ev::RestDone(r) => {
                let peer = self.requests[r].peer;
                match self.cfg.step {
                    Step::Register => {
                        let done = self.endorsers[peer].serve(now, SimTime::from_millis_f64(self.p.endorse_ms));
                        q.schedule(done, Ev::Endorsed(r)).expect("future");
                    }
                    Step::Verify => {
                        if let Some(at) = self.statedb[peer].push(now, r) {
                            q.schedule(at, Ev::QueryWake(peer)).expect("future");
                        }
                    }
                }
            }
            Ev::Endorsed(r) => self.on_endorsed(q, now, r)?,
            Ev::Sequenced(s, r) => {
                let host = self.net.topology.ordering(Role::Sequencer, s);
                match (self.cluster.is_available(), self.leader_broker()) {
                    (true, Some(b)) => {
                        let dst = self.net.topology.ordering(Role::Broker, b);
                        let size = self.p.envelope_bytes;
                        self.send(q, now, host, dst, size, MessageKind::Envelope, Payload::ToBroker(r));
                    }
                    _ => self.fail(q, now, host, r),
                }
            }
            Ev::Brokered(b, r) => {
                self.requests[r].leader = b;
                let host = self.net.topology.ordering(Role::Broker, b);
                let followers: Vec<usize> = self
                    .cluster
                    .up_instances(Role::Broker)
                    .into_iter()
                    .filter(|f| *f != b)
                    .collect();
                if followers.is_empty() {
                    self.append(q, now, r, host);
                } else {
                    self.acks_pending.insert(r, followers.len());
                    for f in followers {
                        let dst = self.net.topology.ordering(Role::Broker, f);
                        let size = self.p.envelope_bytes;
                        self.send(q, now, host, dst, size, MessageKind::Replication, Payload::Replica(r, f));
                    }
                }
            }
            Ev::CutTimer => {
                if self.cut_timer == Some(now) {
                    self.cut_timer = None;
                }
                self.cut(q, now);
            }
            Ev::CommitWake(peer) => {
                if let Some(blocks) = self.committers[peer].wake(now) {
                    let txs: usize = blocks.iter().map(|b| b.transactions.len()).sum();
                    let cost = SimTime::from_millis_f64(self.p.commit_per_tx_ms * txs as f64);
                    let (done, next) = self.committers[peer].start(now, cost);
                    q.schedule(done, Ev::CommitDone(peer, blocks)).expect("future");
                    if let Some(at) = next {
                        q.schedule(at, Ev::CommitWake(peer)).expect("future");
                    }
                }
            }
            Ev::CommitDone(peer, blocks) => self.on_committed(q, now, peer, blocks)?,
            Ev::QueryWake(peer) => {
                if let Some(batch) = self.statedb[peer].wake(now) {
                    let ms = MemberStateId::from_index(peer);
                    let mut cost_us = 0.0;
                    for &r in &batch {
                        let ctx = ChaincodeContext::new(ms, true, self.ledgers[peer].state());
                        let resp = verify_certificate(&ctx, &self.requests[r].hash, self.cfg.query_mode)?;
                        self.requests[r].ok = matches!(resp.outcome, VerifyOutcome::Found(_));
                        cost_us += self.p.query_base_ms * 1000.0 + self.p.query_per_record_us * resp.scan_count as f64;
                    }
                    let (done, next) = self.statedb[peer].start(now, SimTime((cost_us.round()) as u64));
                    q.schedule(done, Ev::QueryDone(peer, batch)).expect("future");
                    if let Some(at) = next {
                        q.schedule(at, Ev::QueryWake(peer)).expect("future");
                    }
                }
            }
            Ev::QueryDone(peer, batch) => {
                let host = self.peer_host(peer);
                let client = self.net.topology.client();
                self.net.note(now, "query-batch", host, batch.len() as u64);
                for r in batch {
                    let size = self.p.response_bytes;
                    self.send(q, now, host, client, size, MessageKind::Response, Payload::Response(r, true));
                }
                if let Some(at) = self.statedb[peer].reschedule() {
                    q.schedule(at, Ev::QueryWake(peer)).expect("future");
                }
            }
            Ev::Fault(i) => {
                let f = self.cfg.fault_schedule[i];
                self.cluster
                    .set_instance_status(f.role, f.index, f.status)
                    .map_err(|e| ScenarioError::Config(e.to_string()))?;
                let host = self.net.topology.ordering(f.role, f.index);
                self.net.note(now, if f.status == InstanceStatus::Up { "up" } else { "down" }, host, 0);
                if f.role == Role::Sequencer {
                    self.resync_peers(q, now);
                }
            }
            Ev::Gossip => {
                let size = self.p.gossip_bytes;
                for i in 0..PEERS {
                    for k in 1..=GOSSIP_FANOUT {
                        let (src, dst) = (self.peer_host(i), self.peer_host((i + k) % PEERS));
                        self.send(q, now, src, dst, size, MessageKind::Gossip, Payload::Background);
                    }
                }
                let next = now + SimTime::from_millis_f64(self.p.gossip_interval_ms);
                if next < self.end {
                    q.schedule(next, Ev::Gossip).expect("future");
                }
            }
            Ev::Heartbeat => {
                let size = self.p.heartbeat_bytes;
                let up: Vec<HostId> = Role::ALL
                    .iter()
                    .flat_map(|r| self.cluster.up_instances(*r).into_iter().map(move |i| (*r, i)))
                    .map(|(r, i)| self.net.topology.ordering(r, i))
                    .collect();
                for &src in &up {
                    for &dst in &up {
                        if src != dst {
                            self.send(q, now, src, dst, size, MessageKind::Heartbeat, Payload::Background);
                        }
                    }
                }
                let next = now + SimTime::from_millis_f64(self.p.heartbeat_interval_ms);
                if next < self.end {
                    q.schedule(next, Ev::Heartbeat).expect("future");
                }
            }
            Ev::Sample => {
                self.samples.push((now.as_secs_f64(), (self.sent - self.finished) as f64));
                let next = now + SimTime::from_secs(1);
                if next <= self.end {
                    q.schedule(next, Ev::Sample).expect("future");
                }
            }
        }
        Ok(())
    }

    fn on_deliver(&mut self, q: &mut EventQueue<Ev>, now: SimTime, msg: SimMessage, payload: Payload) -> Result<(), ScenarioError> {
        match payload {
            Payload::Background => {}
            Payload::Request(r) => {
                q.schedule(now + SimTime::from_millis_f64(self.p.rest_overhead_ms), Ev::RestDone(r))
                    .expect("future");
            }
            Payload::Envelope(r) => {
                let s = self.sequencer_index(msg.dst);
                if self.is_up(Role::Sequencer, s) {
                    let done = self.sequencers[s].serve(now, SimTime::from_millis_f64(self.p.orderer_per_envelope_ms));
                    q.schedule(done, Ev::Sequenced(s, r)).expect("future");
                } else {
                    // Crashed sequencer: the peer retries on its newly assigned one.
                    self.submit_envelope(q, now, r);
                }
            }
            Payload::ToBroker(r) => {
                let b = self.broker_index(msg.dst);
                if self.is_up(Role::Broker, b) {
                    let done = self.brokers[b].serve(now, SimTime::from_millis_f64(self.p.broker_per_envelope_ms));
                    q.schedule(done, Ev::Brokered(b, r)).expect("future");
                } else if let (true, Some(nb)) = (self.cluster.is_available(), self.leader_broker()) {
                    let dst = self.net.topology.ordering(Role::Broker, nb);
                    let size = self.p.envelope_bytes;
                    self.send(q, now, msg.src, dst, size, MessageKind::Envelope, Payload::ToBroker(r));
                } else {
                    self.fail(q, now, msg.src, r);
                }
            }
            Payload::Replica(r, f) => {
                if self.is_up(Role::Broker, f) {
                    let leader = self.net.topology.ordering(Role::Broker, self.requests[r].leader);
                    let size = self.p.replica_ack_bytes;
                    self.send(q, now, msg.dst, leader, size, MessageKind::Replication, Payload::ReplicaAck(r));
                } else {
                    // A crashed follower drops out of the in-sync set.
                    self.replica_acked(q, now, r);
                }
            }
            Payload::ReplicaAck(r) => self.replica_acked(q, now, r),
            Payload::Block(block) => match self.net.topology.kind(msg.dst) {
                crate::netsim::HostKind::Ordering(Role::Sequencer, s) => {
                    if self.is_up(Role::Sequencer, s) {
                        let size = self.block_bytes(&block);
                        for peer in 0..PEERS {
                            if self.assigned_sequencer(peer) == Some(s) {
                                let dst = self.peer_host(peer);
                                self.send(q, now, msg.dst, dst, size, MessageKind::Block, Payload::Block(Arc::clone(&block)));
                            }
                        }
                    }
                }
                crate::netsim::HostKind::Peer(ms) => self.on_block(q, now, ms.index(), block),
                _ => {}
            },
            Payload::Response(r, ok) => {
                let req = &mut self.requests[r];
                if req.done.is_none() {
                    req.done = Some(now);
                    req.ok = ok && (self.cfg.step == Step::Register || req.ok);
                    self.finished += 1;
                }
            }
        }
        Ok(())
    }

    fn sequencer_index(&self, h: HostId) -> usize {
        match self.net.topology.kind(h) {
            crate::netsim::HostKind::Ordering(Role::Sequencer, i) => i,
            other => unreachable!("not a sequencer: {other}"),
        }
    }

    fn broker_index(&self, h: HostId) -> usize {
        match self.net.topology.kind(h) {
            crate::netsim::HostKind::Ordering(Role::Broker, i) => i,
            other => unreachable!("not a broker: {other}"),
        }
    }

    fn block_bytes(&self, b: &Block) -> u64 {
        self.p.block_header_bytes + self.p.block_tx_bytes * b.transactions.len() as u64
    }

    fn on_endorsed(&mut self, q: &mut EventQueue<Ev>, now: SimTime, r: usize) -> Result<(), ScenarioError> {
        let peer = self.requests[r].peer;
        let member = &self.fx.members[peer];
        let mut tag = Encoder::tagged("vaxledger/scenario/request/v1");
        tag.put_u64(self.fx.seed).put_u64(self.tps.to_bits()).put_u64(r as u64);
        let request_seed = tag.digest();
        let subject = generate_did("vax", request_seed.as_bytes())?;
        let vaccine = VaccineInfo {
            product: "Comirnaty".into(),
            dose_number: 2,
            total_doses: 2,
            batch_id: format!("LOT-{}", r % 97),
        };
        let issued_at = 1_622_505_600 + now.micros() / 1_000_000;
        let credential = issue_credential(
            &member.issuer_key,
            &member.center.issuer_did,
            &subject,
            &vaccine,
            issued_at,
            ONE_YEAR_SECONDS,
        )?;
        let hash = hash_credential(&credential)?;
        self.requests[r].hash = hash;
        let ctx = ChaincodeContext::new(member.id, true, self.ledgers[peer].state());
        let proposal = register_certificate(
            ctx,
            hash.as_bytes(),
            &member.center.issuer_did,
            json!({ "product": vaccine.product, "dose": vaccine.dose_number, "issued": issued_at }),
        );
        let host = self.peer_host(peer);
        match proposal {
            Ok(resp) => {
                let tx: Transaction = resp.into_transaction(request_seed, member.id, &member.key);
                self.tx_index.insert(tx.tx_id, r);
                self.pending_tx.insert(r, Arc::new(tx));
                self.submit_envelope(q, now, r);
            }
            Err(_) => {
                self.chaincode_errors += 1;
                self.fail(q, now, host, r);
            }
        }
        Ok(())
    }

    fn submit_envelope(&mut self, q: &mut EventQueue<Ev>, now: SimTime, r: usize) {
        let peer = self.requests[r].peer;
        let host = self.peer_host(peer);
        match self.assigned_sequencer(peer) {
            Some(s) => {
                let dst = self.net.topology.ordering(Role::Sequencer, s);
                let size = self.p.envelope_bytes;
                self.send(q, now, host, dst, size, MessageKind::Envelope, Payload::Envelope(r));
            }
            None => self.fail(q, now, host, r),
        }
    }

    fn replica_acked(&mut self, q: &mut EventQueue<Ev>, now: SimTime, r: usize) {
        let Some(n) = self.acks_pending.get_mut(&r) else {
            return;
        };
        *n -= 1;
        if *n == 0 {
            self.acks_pending.remove(&r);
            let leader = self.net.topology.ordering(Role::Broker, self.requests[r].leader);
            self.append(q, now, r, leader);
        }
    }

    fn append(&mut self, q: &mut EventQueue<Ev>, now: SimTime, r: usize, leader: HostId) {
        let tx = Arc::clone(&self.pending_tx[&r]);
        match self.cluster.submit(Envelope::new(tx, now)) {
            SubmitOutcome::Accepted => self.cut(q, now),
            SubmitOutcome::Duplicate => {}
            SubmitOutcome::Unavailable => self.fail(q, now, leader, r),
        }
    }

    fn cut(&mut self, q: &mut EventQueue<Ev>, now: SimTime) {
        while let Some(batch) = self.cluster.cut_batch(now) {
            let block = Arc::new(seal_block(&batch, self.tip, &self.fx.sealer).expect("non-empty batch"));
            self.tip = Some((block.number, block.hash()));
            self.sealed.push(Arc::clone(&block));
            let Some(b) = self.leader_broker() else { continue };
            let src = self.net.topology.ordering(Role::Broker, b);
            self.net.note(now, "block-cut", src, block.transactions.len() as u64);
            let size = self.block_bytes(&block);
            for s in self.cluster.up_instances(Role::Sequencer) {
                let dst = self.net.topology.ordering(Role::Sequencer, s);
                self.send(q, now, src, dst, size, MessageKind::Block, Payload::Block(Arc::clone(&block)));
            }
        }
        if let Some(deadline) = self.cluster.next_cut_deadline() {
            if self.cut_timer.is_none_or(|t| t > deadline) {
                self.cut_timer = Some(deadline);
                q.schedule(deadline.max(now), Ev::CutTimer).expect("future");
            }
        }
    }

    fn resync_peers(&mut self, q: &mut EventQueue<Ev>, now: SimTime) {
        for peer in 0..PEERS {
            let Some(s) = self.assigned_sequencer(peer) else { continue };
            let src = self.net.topology.ordering(Role::Sequencer, s);
            let dst = self.peer_host(peer);
            let from = self.peer_next[peer];
            let missing: Vec<Arc<Block>> = self
                .sealed
                .iter()
                .filter(|b| b.number >= from && !self.peer_buffer[peer].contains_key(&b.number))
                .cloned()
                .collect();
            for b in missing {
                let size = self.block_bytes(&b);
                self.send(q, now, src, dst, size, MessageKind::Block, Payload::Block(b));
            }
        }
    }

    fn on_block(&mut self, q: &mut EventQueue<Ev>, now: SimTime, peer: usize, block: Arc<Block>) {
        if block.number < self.peer_next[peer] || self.peer_buffer[peer].contains_key(&block.number) {
            return;
        }
        self.peer_buffer[peer].insert(block.number, block);
        while let Some(b) = self.peer_buffer[peer].remove(&self.peer_next[peer]) {
            self.peer_next[peer] += 1;
            if let Some(at) = self.committers[peer].push(now, b) {
                q.schedule(at, Ev::CommitWake(peer)).expect("future");
            }
        }
    }

    fn on_committed(&mut self, q: &mut EventQueue<Ev>, now: SimTime, peer: usize, blocks: Vec<Arc<Block>>) -> Result<(), ScenarioError> {
        let host = self.peer_host(peer);
        let client = self.net.topology.client();
        for block in blocks {
            let flags = self.ledgers[peer].commit(Arc::clone(&block), &self.fx.policy)?.to_vec();
            self.net.note(now, "commit", host, block.transactions.len() as u64);
            for (tx, flag) in block.transactions.iter().zip(flags) {
                if let Some(&r) = self.tx_index.get(&tx.tx_id) {
                    if self.requests[r].peer == peer {
                        let size = self.p.ack_bytes;
                        self.send(q, now, host, client, size, MessageKind::Response, Payload::Response(r, flag.is_valid()));
                    }
                }
            }
        }
        if let Some(at) = self.committers[peer].reschedule() {
            q.schedule(at, Ev::CommitWake(peer)).expect("future");
        }
        Ok(())
    }

    fn metrics(&self) -> LevelMetrics {
        let mut rts: Vec<f64> = self
            .requests
            .iter()
            .filter(|r| r.ok)
            .filter_map(|r| r.done.map(|d| (d - r.start).as_millis_f64()))
            .collect();
        rts.sort_by(f64::total_cmp);
        let errors = self.requests.iter().filter(|r| !r.ok || r.done.is_none()).count();
        let secs = self.end.as_secs_f64();
        let window = (SimTime::ZERO, self.end);
        let acc = &self.net.accounting;
        let peer_bw = (0..PEERS)
            .map(|i| acc.bytes_in(self.peer_host(i), window.0, window.1))
            .max()
            .unwrap_or(0) as f64
            / secs
            / 1000.0;
        let ord_bw = self
            .net
            .topology
            .ordering_hosts()
            .map(|h| acc.bytes_in(h, window.0, window.1))
            .sum::<u64>() as f64
            / secs
            / 1000.0;
        let span = self.end.max(self.last_event).as_secs_f64();
        let frac = |xs: &mut dyn Iterator<Item = SimTime>| xs.map(|t| t.as_secs_f64()).fold(0.0, f64::max) / span;
        let busy = BusyFractions {
            endorser: frac(&mut self.endorsers.iter().map(FifoServer::busy_time)),
            committer: frac(&mut self.committers.iter().map(BatchServer::busy_time)),
            statedb: frac(&mut self.statedb.iter().map(BatchServer::busy_time)),
            sequencer: frac(&mut self.sequencers.iter().map(FifoServer::busy_time)),
            broker: frac(&mut self.brokers.iter().map(FifoServer::busy_time)),
        };
        let committed = match self.cfg.step {
            Step::Register => self.ledgers[self.report_peer()].valid_tx_count() - self.fx.genesis_tx_count(),
            Step::Verify => 0,
        };
        let growth = queue_growth(&self.samples, secs / 2.0);
        let saturated = errors > 0 || growth > (0.02 * self.tps).max(0.5);
        let mean = if rts.is_empty() { 0.0 } else { rts.iter().sum::<f64>() / rts.len() as f64 };
        LevelMetrics {
            step: self.cfg.step,
            tps: self.tps,
            requests: self.requests.len(),
            completed: rts.len(),
            errors,
            mean_ms: mean,
            median_ms: percentile(&rts, 50.0),
            p95_ms: percentile(&rts, 95.0),
            peer_bandwidth_kb: peer_bw,
            ordering_bandwidth_kb: ord_bw,
            busy,
            saturated,
            queue_growth_per_s: growth,
            accepted: self.cluster.log().len(),
            committed,
        }
    }
}

/// Least-squares slope of in-flight requests over samples taken at or after `from`.
fn queue_growth(samples: &[(f64, f64)], from: f64) -> f64 {
    let pts: Vec<(f64, f64)> = samples.iter().copied().filter(|(t, _)| *t >= from).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn growth_of_a_ramp() {
        let s: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 * i as f64 + 1.0)).collect();
        assert!((queue_growth(&s, 0.0) - 3.0).abs() < 1e-12);
        assert_eq!(queue_growth(&s[..1], 0.0), 0.0);
        let flat: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 5.0)).collect();
        assert_eq!(queue_growth(&flat, 0.0), 0.0);
    }
}
