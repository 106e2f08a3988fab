//! Deterministic discrete-event network model.
//!
//! Time is integer microseconds. Links form a uniform full mesh; each host has
//! one egress interface, so messages leaving the same host serialize behind
//! each other before paying the propagation latency. Service work is modeled
//! with single-server queues, either plain FIFO ([`FifoServer`]) or
//! interval-driven batch processing ([`BatchServer`]).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::{self, Write};
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::MemberStateId;
use crate::ordering::Role;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Simulated instant or duration, in microseconds.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        SimTime((ms * 1_000.0).round().max(0.0) as u64)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1_000_000.0).round().max(0.0) as u64)
    }

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub fn micros(&self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(&self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_secs_f64(&self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Debug for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}ms", self.as_millis_f64())
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}ms", self.as_millis_f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    /// One-way propagation latency per link traversal.
    pub latency_ms: f64,
    pub bandwidth_bps: f64,
    /// Constant per-message framing cost standing in for TLS records.
    pub tls_overhead_bytes: u64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            latency_ms: 3.0,
            bandwidth_bps: 1e9,
            tls_overhead_bytes: 60,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.latency_ms >= 0.0 && self.latency_ms.is_finite()) {
            return Err(SimError::InvalidArgument("latency must be >= 0".into()));
        }
        if !(self.bandwidth_bps > 0.0 && self.bandwidth_bps.is_finite()) {
            return Err(SimError::InvalidArgument("bandwidth must be > 0".into()));
        }
        Ok(())
    }

    pub fn latency(&self) -> SimTime {
        SimTime::from_millis_f64(self.latency_ms)
    }

    /// Serialization time of `size` payload bytes plus framing, rounded up to a microsecond.
    pub fn transmission(&self, size: u64) -> SimTime {
        let bits = ((size + self.tls_overhead_bytes) * 8) as f64;
        SimTime((bits * 1e6 / self.bandwidth_bps).ceil() as u64)
    }

    pub fn wire_bytes(&self, size: u64) -> u64 {
        size + self.tls_overhead_bytes
    }
}

/// latency + (size + tls_overhead) · 8 / bandwidth
pub fn transit_delay(link: &LinkParams, size: u64) -> Result<SimTime, SimError> {
    if size == 0 {
        return Err(SimError::InvalidArgument("message size must be positive".into()));
    }
    Ok(link.latency() + link.transmission(size))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HostKind {
    Peer(MemberStateId),
    Ordering(Role, usize),
    Client,
}

impl fmt::Display for HostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HostKind::Peer(ms) => write!(f, "peer-{}", ms.code()),
            HostKind::Ordering(role, i) => write!(f, "{}-{}", role.as_str(), i),
            HostKind::Client => f.write_str("client"),
        }
    }
}

/// 27 peers, 3 coordinators, 4 brokers, 3 sequencers and one load-generating client.
#[derive(Debug, Clone)]
pub struct Topology {
    hosts: Vec<HostKind>,
    pub link: LinkParams,
}

impl Topology {
    pub fn new(link: LinkParams) -> Result<Self, SimError> {
        link.validate()?;
        let mut hosts: Vec<HostKind> = MemberStateId::all().map(HostKind::Peer).collect();
        for role in Role::ALL {
            hosts.extend((0..role.cardinality()).map(|i| HostKind::Ordering(role, i)));
        }
        hosts.push(HostKind::Client);
        Ok(Topology { hosts, link })
    }

    pub fn len(&self) -> usize {
        self.hosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hosts.is_empty()
    }

    pub fn kind(&self, h: HostId) -> HostKind {
        self.hosts[h.0 as usize]
    }

    pub fn peer(&self, ms: MemberStateId) -> HostId {
        HostId(ms.index() as u16)
    }

    pub fn peers(&self) -> impl Iterator<Item = HostId> + '_ {
        (0..self.hosts.len())
            .filter(|i| matches!(self.hosts[*i], HostKind::Peer(_)))
            .map(|i| HostId(i as u16))
    }

    pub fn ordering(&self, role: Role, index: usize) -> HostId {
        let i = self
            .hosts
            .iter()
            .position(|k| *k == HostKind::Ordering(role, index))
            .expect("ordering instance in topology");
        HostId(i as u16)
    }

    pub fn ordering_hosts(&self) -> impl Iterator<Item = HostId> + '_ {
        (0..self.hosts.len())
            .filter(|i| matches!(self.hosts[*i], HostKind::Ordering(..)))
            .map(|i| HostId(i as u16))
    }

    pub fn client(&self) -> HostId {
        HostId((self.hosts.len() - 1) as u16)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Proposal,
    Endorsement,
    Envelope,
    Replication,
    Block,
    Query,
    Response,
    Gossip,
    Heartbeat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimMessage {
    pub src: HostId,
    pub dst: HostId,
    pub size: u64,
    pub kind: MessageKind,
}

/// Timing and size constants of the simulated services.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceTimeProfile {
    /// REST application interface, per request.
    pub rest_overhead_ms: f64,
    /// Chaincode simulation and endorsement signing, per proposal.
    pub endorse_ms: f64,
    /// Block validation and state update, per transaction.
    pub commit_per_tx_ms: f64,
    pub orderer_per_envelope_ms: f64,
    pub broker_per_envelope_ms: f64,
    pub query_base_ms: f64,
    /// State-database cost per record visited by a query.
    pub query_per_record_us: f64,
    /// State-database work loop period: pending queries are taken in one
    /// batch per period. Zero serves each query as it arrives.
    pub query_batch_interval_ms: f64,
    /// Committer work loop period: received blocks are validated in one
    /// batch per period. Zero commits each block as it arrives.
    pub commit_batch_interval_ms: f64,
    pub request_bytes: u64,
    pub ack_bytes: u64,
    pub query_bytes: u64,
    pub response_bytes: u64,
    pub envelope_bytes: u64,
    pub replica_ack_bytes: u64,
    pub block_header_bytes: u64,
    pub block_tx_bytes: u64,
    pub gossip_bytes: u64,
    pub gossip_interval_ms: f64,
    pub heartbeat_bytes: u64,
    pub heartbeat_interval_ms: f64,
}

impl Default for ServiceTimeProfile {
    fn default() -> Self {
        crate::scenario::calibrated_profile()
    }
}

impl ServiceTimeProfile {
    /// Every duration zero; message sizes kept. Background traffic disabled.
    pub fn zero() -> Self {
        ServiceTimeProfile {
            rest_overhead_ms: 0.0,
            endorse_ms: 0.0,
            commit_per_tx_ms: 0.0,
            orderer_per_envelope_ms: 0.0,
            broker_per_envelope_ms: 0.0,
            query_base_ms: 0.0,
            query_per_record_us: 0.0,
            query_batch_interval_ms: 0.0,
            commit_batch_interval_ms: 0.0,
            gossip_interval_ms: 0.0,
            heartbeat_interval_ms: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let durations = [
            ("rest_overhead_ms", self.rest_overhead_ms),
            ("endorse_ms", self.endorse_ms),
            ("commit_per_tx_ms", self.commit_per_tx_ms),
            ("orderer_per_envelope_ms", self.orderer_per_envelope_ms),
            ("broker_per_envelope_ms", self.broker_per_envelope_ms),
            ("query_base_ms", self.query_base_ms),
            ("query_per_record_us", self.query_per_record_us),
            ("query_batch_interval_ms", self.query_batch_interval_ms),
            ("commit_batch_interval_ms", self.commit_batch_interval_ms),
            ("gossip_interval_ms", self.gossip_interval_ms),
            ("heartbeat_interval_ms", self.heartbeat_interval_ms),
        ];
        for (name, v) in durations {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::InvalidArgument(format!("{name} must be >= 0")));
            }
        }
        let sizes = [
            ("request_bytes", self.request_bytes),
            ("ack_bytes", self.ack_bytes),
            ("query_bytes", self.query_bytes),
            ("response_bytes", self.response_bytes),
            ("envelope_bytes", self.envelope_bytes),
            ("replica_ack_bytes", self.replica_ack_bytes),
            ("block_tx_bytes", self.block_tx_bytes),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(SimError::InvalidArgument(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

struct Scheduled<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Priority queue of timed events; equal times fire in insertion order.
pub struct EventQueue<E> {
    clock: SimTime,
    seq: u64,
    heap: BinaryHeap<Scheduled<E>>,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            clock: SimTime::ZERO,
            seq: 0,
            heap: BinaryHeap::new(),
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<(), SimError> {
        if at < self.clock {
            return Err(SimError::InvalidArgument(format!(
                "cannot schedule at {at} before the clock ({})",
                self.clock
            )));
        }
        self.heap.push(Scheduled {
            at,
            seq: self.seq,
            event,
        });
        self.seq += 1;
        Ok(())
    }

    /// Next event due at or before `t_end`, advancing the clock to its time.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<(SimTime, E)> {
        if self.heap.peek().is_some_and(|s| s.at <= t_end) {
            let s = self.heap.pop().expect("peeked");
            self.clock = s.at;
            Some((s.at, s.event))
        } else {
            None
        }
    }

    /// Processes every event due at or before `t_end`, then sets the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> usize
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        let mut n = 0;
        while let Some((at, event)) = self.pop_until(t_end) {
            handler(self, at, event);
            n += 1;
        }
        self.clock = self.clock.max(t_end);
        n
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub time_us: u64,
    pub event: String,
    pub host: String,
    pub size: u64,
}

/// Per-host byte counters with timestamps, for windowed bandwidth queries.
#[derive(Debug, Clone, Default)]
pub struct Accounting {
    // (time, cumulative bytes) per host, nondecreasing in time.
    series: Vec<Vec<(SimTime, u64)>>,
    sent_total: u64,
    received_total: u64,
}

impl Accounting {
    pub fn new(hosts: usize) -> Self {
        Accounting {
            series: vec![Vec::new(); hosts],
            sent_total: 0,
            received_total: 0,
        }
    }

    fn record(&mut self, host: HostId, at: SimTime, bytes: u64) {
        let s = &mut self.series[host.0 as usize];
        let cum = s.last().map_or(0, |(_, c)| *c) + bytes;
        debug_assert!(s.last().is_none_or(|(t, _)| *t <= at));
        s.push((at, cum));
    }

    pub fn record_sent(&mut self, host: HostId, at: SimTime, bytes: u64) {
        self.sent_total += bytes;
        self.record(host, at, bytes);
    }

    pub fn record_received(&mut self, host: HostId, at: SimTime, bytes: u64) {
        self.received_total += bytes;
        self.record(host, at, bytes);
    }

    pub fn sent_total(&self) -> u64 {
        self.sent_total
    }

    pub fn received_total(&self) -> u64 {
        self.received_total
    }

    fn cumulative_before(&self, host: HostId, t: SimTime) -> u64 {
        let s = &self.series[host.0 as usize];
        let idx = s.partition_point(|(at, _)| *at < t);
        if idx == 0 {
            0
        } else {
            s[idx - 1].1
        }
    }

    /// Bytes sent plus received by `host` in `[from, to)`.
    pub fn bytes_in(&self, host: HostId, from: SimTime, to: SimTime) -> u64 {
        self.cumulative_before(host, to) - self.cumulative_before(host, from)
    }
}

/// KB (1000 bytes) sent plus received by `host` within `[from, to)`.
pub fn bandwidth_report(acc: &Accounting, host: HostId, from: SimTime, to: SimTime) -> Result<f64, SimError> {
    if to < from {
        return Err(SimError::InvalidArgument("window ends before it starts".into()));
    }
    Ok(acc.bytes_in(host, from, to) as f64 / 1000.0)
}

/// Egress serialization, delivery timing, accounting and optional tracing.
pub struct Network {
    pub topology: Topology,
    egress_free: Vec<SimTime>,
    pub accounting: Accounting,
    trace: Option<Vec<TraceRecord>>,
}

impl Network {
    pub fn new(topology: Topology, trace: bool) -> Self {
        let n = topology.len();
        Network {
            topology,
            egress_free: vec![SimTime::ZERO; n],
            accounting: Accounting::new(n),
            trace: trace.then(Vec::new),
        }
    }

    /// Queues `msg` on the sender's interface; returns its arrival time at the destination.
    pub fn send(&mut self, now: SimTime, msg: &SimMessage) -> SimTime {
        let link = self.topology.link;
        let wire = link.wire_bytes(msg.size);
        let start = now.max(self.egress_free[msg.src.0 as usize]);
        let done = start + link.transmission(msg.size);
        self.egress_free[msg.src.0 as usize] = done;
        self.accounting.record_sent(msg.src, now, wire);
        self.trace_event(now, "send", msg.src, msg.kind, wire);
        done + link.latency()
    }

    pub fn deliver(&mut self, now: SimTime, msg: &SimMessage) {
        let wire = self.topology.link.wire_bytes(msg.size);
        self.accounting.record_received(msg.dst, now, wire);
        self.trace_event(now, "recv", msg.dst, msg.kind, wire);
    }

    fn trace_event(&mut self, now: SimTime, dir: &str, host: HostId, kind: MessageKind, size: u64) {
        if let Some(t) = &mut self.trace {
            let kind = serde_json::to_value(kind).expect("kind serializes");
            t.push(TraceRecord {
                time_us: now.micros(),
                event: format!("{dir}:{}", kind.as_str().unwrap_or_default()),
                host: self.topology.kind(host).to_string(),
                size,
            });
        }
    }

    /// Adds a non-network event (service completion, commit, ...) to the trace.
    pub fn note(&mut self, now: SimTime, event: &str, host: HostId, size: u64) {
        if let Some(t) = &mut self.trace {
            t.push(TraceRecord {
                time_us: now.micros(),
                event: event.to_owned(),
                host: self.topology.kind(host).to_string(),
                size,
            });
        }
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }
}

/// Newline-delimited JSON, one record per line.
pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Single FIFO server.
#[derive(Debug, Clone, Default)]
pub struct FifoServer {
    free_at: SimTime,
    busy: SimTime,
}

impl FifoServer {
    /// Enqueues `cost` worth of work at `now`; returns its completion time.
    pub fn serve(&mut self, now: SimTime, cost: SimTime) -> SimTime {
        let start = now.max(self.free_at);
        self.free_at = start + cost;
        self.busy += cost;
        self.free_at
    }

    pub fn busy_time(&self) -> SimTime {
        self.busy
    }

    pub fn free_at(&self) -> SimTime {
        self.free_at
    }
}

/// Server that wakes every `interval`, takes everything pending, and works
/// through it as one batch whose results are released together.
#[derive(Debug, Clone)]
pub struct BatchServer<T> {
    interval: SimTime,
    pending: Vec<T>,
    free_at: SimTime,
    busy: SimTime,
    wake_scheduled: Option<SimTime>,
}

impl<T> BatchServer<T> {
    pub fn new(interval: SimTime) -> Self {
        BatchServer {
            interval,
            pending: Vec::new(),
            free_at: SimTime::ZERO,
            busy: SimTime::ZERO,
            wake_scheduled: None,
        }
    }

    pub fn interval(&self) -> SimTime {
        self.interval
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn busy_time(&self) -> SimTime {
        self.busy
    }

    fn next_boundary(&self, t: SimTime) -> SimTime {
        if self.interval.0 == 0 {
            return t;
        }
        let i = self.interval.0;
        SimTime(t.0.div_ceil(i) * i)
    }

    /// Adds an item. Returns the wake-up time the caller must schedule, if one
    /// is not already pending.
    pub fn push(&mut self, now: SimTime, item: T) -> Option<SimTime> {
        self.pending.push(item);
        if self.wake_scheduled.is_some() {
            return None;
        }
        let at = self.next_boundary(now.max(self.free_at));
        self.wake_scheduled = Some(at);
        Some(at)
    }

    /// Handles a wake-up at `now`. If the server is idle, takes the pending
    /// items; the caller computes their total cost and reports it through
    /// [`BatchServer::start`].
    pub fn wake(&mut self, now: SimTime) -> Option<Vec<T>> {
        if self.wake_scheduled != Some(now) {
            return None;
        }
        self.wake_scheduled = None;
        if self.pending.is_empty() {
            return None;
        }
        Some(std::mem::take(&mut self.pending))
    }

    /// Marks the server busy for `cost` from `now`. Returns the batch
    /// completion time and, if items arrived meanwhile, the next wake-up to
    /// schedule.
    pub fn start(&mut self, now: SimTime, cost: SimTime) -> (SimTime, Option<SimTime>) {
        self.free_at = now + cost;
        self.busy += cost;
        (self.free_at, self.reschedule())
    }

    /// Wake-up needed after a batch completes with items still pending.
    pub fn reschedule(&mut self) -> Option<SimTime> {
        if self.pending.is_empty() || self.wake_scheduled.is_some() {
            return None;
        }
        let at = self.next_boundary(self.free_at);
        self.wake_scheduled = Some(at);
        Some(at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gbps() -> LinkParams {
        LinkParams {
            latency_ms: 3.0,
            bandwidth_bps: 1e9,
            tls_overhead_bytes: 0,
        }
    }

    #[test]
    fn transit_delay_examples() {
        let l = gbps();
        assert_eq!(transit_delay(&l, 125_000).unwrap(), SimTime(4_000));
        assert_eq!(transit_delay(&l, 125).unwrap(), SimTime(3_001));
        let mut with_overhead = l;
        with_overhead.tls_overhead_bytes = 60;
        assert_eq!(transit_delay(&with_overhead, 124_940).unwrap(), SimTime(4_000));
        assert!(transit_delay(&l, 0).is_err());
    }

    #[test]
    fn tenfold_slower_link_scales_transmission_only() {
        let fast = gbps();
        let slow = LinkParams {
            bandwidth_bps: 1e8,
            ..fast
        };
        for size in [125u64, 1_000, 125_000, 1_000_000] {
            let tf = transit_delay(&fast, size).unwrap() - fast.latency();
            let ts = transit_delay(&slow, size).unwrap() - slow.latency();
            assert_eq!(ts.0, tf.0 * 10, "size {size}");
            assert_eq!(fast.latency(), slow.latency());
        }
    }

    #[test]
    fn queue_orders_by_time_then_insertion() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(5), "b").unwrap();
        q.schedule(SimTime(5), "c").unwrap();
        q.schedule(SimTime(1), "a").unwrap();
        let mut seen = Vec::new();
        let n = q.run_until(SimTime(10), |_, at, e| seen.push((at.0, e)));
        assert_eq!(n, 3);
        assert_eq!(seen, vec![(1, "a"), (5, "b"), (5, "c")]);
        assert_eq!(q.clock(), SimTime(10));
    }

    #[test]
    fn schedule_at_clock_fires_next_and_past_is_rejected() {
        let mut q = EventQueue::new();
        q.run_until(SimTime(100), |_, _, _: u8| {});
        assert!(q.schedule(SimTime(99), 1).is_err());
        q.schedule(SimTime(200), 2).unwrap();
        q.schedule(SimTime(100), 1).unwrap();
        assert_eq!(q.pop_until(SimTime(1000)), Some((SimTime(100), 1)));
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert_eq!(q.run_until(SimTime(42), |_, _, _| {}), 0);
        assert_eq!(q.clock(), SimTime(42));
    }

    #[test]
    fn handlers_can_schedule_follow_ups() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(0), 0u32).unwrap();
        let n = q.run_until(SimTime(100), |q, at, n| {
            if n < 5 {
                q.schedule(at + SimTime(10), n + 1).unwrap();
            }
        });
        assert_eq!(n, 6);
    }

    #[test]
    fn bandwidth_counts_both_ends() {
        let topo = Topology::new(LinkParams {
            tls_overhead_bytes: 0,
            ..gbps()
        })
        .unwrap();
        let a = topo.peers().next().unwrap();
        let b = topo.client();
        let mut net = Network::new(topo, false);
        assert_eq!(bandwidth_report(&net.accounting, a, SimTime(0), SimTime(1_000_000)).unwrap(), 0.0);
        let msg = SimMessage {
            src: a,
            dst: b,
            size: 1000,
            kind: MessageKind::Query,
        };
        let at = net.send(SimTime(0), &msg);
        net.deliver(at, &msg);
        let w = (SimTime(0), SimTime(1_000_000));
        assert_eq!(bandwidth_report(&net.accounting, a, w.0, w.1).unwrap(), 1.0);
        assert_eq!(bandwidth_report(&net.accounting, b, w.0, w.1).unwrap(), 1.0);
        assert_eq!(net.accounting.sent_total(), net.accounting.received_total());
    }

    #[test]
    fn egress_serializes_back_to_back_sends() {
        let topo = Topology::new(LinkParams {
            tls_overhead_bytes: 0,
            ..gbps()
        })
        .unwrap();
        let a = topo.peers().next().unwrap();
        let b = topo.client();
        let mut net = Network::new(topo, false);
        let msg = SimMessage {
            src: a,
            dst: b,
            size: 125_000,
            kind: MessageKind::Block,
        };
        assert_eq!(net.send(SimTime(0), &msg), SimTime(4_000));
        assert_eq!(net.send(SimTime(0), &msg), SimTime(5_000));
    }

    #[test]
    fn topology_shape() {
        let t = Topology::new(LinkParams::default()).unwrap();
        assert_eq!(t.peers().count(), 27);
        assert_eq!(t.ordering_hosts().count(), 10);
        assert_eq!(t.len(), 38);
        assert!(Topology::new(LinkParams {
            bandwidth_bps: 0.0,
            ..LinkParams::default()
        })
        .is_err());
    }

    #[test]
    fn batch_server_takes_everything_pending_at_the_boundary() {
        let mut s = BatchServer::new(SimTime(100));
        assert_eq!(s.push(SimTime(10), 'a'), Some(SimTime(100)));
        assert_eq!(s.push(SimTime(20), 'b'), None);
        assert_eq!(s.wake(SimTime(50)), None);
        let batch = s.wake(SimTime(100)).unwrap();
        assert_eq!(batch, vec!['a', 'b']);
        let (done, next) = s.start(SimTime(100), SimTime(150));
        assert_eq!(done, SimTime(250));
        assert_eq!(next, None);
        // Arrival while busy waits for the first boundary after the batch ends.
        assert_eq!(s.push(SimTime(120), 'c'), Some(SimTime(300)));
    }

    #[test]
    fn zero_interval_batch_server_is_immediate() {
        let mut s = BatchServer::new(SimTime::ZERO);
        assert_eq!(s.push(SimTime(7), 1), Some(SimTime(7)));
        assert_eq!(s.wake(SimTime(7)), Some(vec![1]));
    }

    #[test]
    fn fifo_server_queues() {
        let mut s = FifoServer::default();
        assert_eq!(s.serve(SimTime(0), SimTime(10)), SimTime(10));
        assert_eq!(s.serve(SimTime(5), SimTime(10)), SimTime(20));
        assert_eq!(s.serve(SimTime(50), SimTime(10)), SimTime(60));
        assert_eq!(s.busy_time(), SimTime(30));
    }
}
