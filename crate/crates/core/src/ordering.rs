//! Crash-fault-tolerant ordering: one logical replicated log gated by the
//! health of its coordinator, broker and sequencer instances, plus block
//! cutting and sealing.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credential::KeyPair;
use crate::encoding::Digest;
use crate::ledger::{compute_block_hash, compute_data_hash, Block, BlockHeader, Transaction};
use crate::netsim::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OrderingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Coordinator,
    Broker,
    Sequencer,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Coordinator, Role::Broker, Role::Sequencer];

    pub fn cardinality(self) -> usize {
        match self {
            Role::Coordinator => 3,
            Role::Broker => 4,
            Role::Sequencer => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Coordinator => "coordinator",
            Role::Broker => "broker",
            Role::Sequencer => "sequencer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub max_message_count: u32,
    pub max_batch_bytes: u64,
    pub batch_timeout_ms: f64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            max_message_count: 10,
            max_batch_bytes: 512 * 1024,
            batch_timeout_ms: crate::scenario::CALIBRATED_BATCH_TIMEOUT_MS,
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<(), OrderingError> {
        if self.max_message_count == 0 {
            return Err(OrderingError::InvalidArgument("max_message_count must be > 0".into()));
        }
        if self.max_batch_bytes == 0 {
            return Err(OrderingError::InvalidArgument("max_batch_bytes must be > 0".into()));
        }
        if !(self.batch_timeout_ms > 0.0 && self.batch_timeout_ms.is_finite()) {
            return Err(OrderingError::InvalidArgument("batch_timeout_ms must be > 0".into()));
        }
        Ok(())
    }

    pub fn batch_timeout(&self) -> SimTime {
        SimTime::from_millis_f64(self.batch_timeout_ms).max(SimTime(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub transaction: Arc<Transaction>,
    pub received_at: SimTime,
}

impl Envelope {
    pub fn new(transaction: Arc<Transaction>, received_at: SimTime) -> Self {
        Envelope {
            transaction,
            received_at,
        }
    }

    pub fn size(&self) -> u64 {
        self.transaction.payload_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitOutcome {
    Accepted,
    /// The transaction id is already in the log; nothing was appended.
    Duplicate,
    Unavailable,
}

/// True iff no role has more than one instance Down.
pub fn availability(statuses: &[(Role, &[InstanceStatus])]) -> bool {
    statuses
        .iter()
        .all(|(_, s)| s.iter().filter(|x| **x == InstanceStatus::Down).count() <= 1)
}

#[derive(Debug, Clone)]
pub struct OrderingCluster {
    status: [Vec<InstanceStatus>; 3],
    log: Vec<Envelope>,
    pending: VecDeque<usize>,
    pending_bytes: u64,
    seen: HashSet<Digest>,
    batch: BatchConfig,
}

fn role_slot(role: Role) -> usize {
    match role {
        Role::Coordinator => 0,
        Role::Broker => 1,
        Role::Sequencer => 2,
    }
}

impl OrderingCluster {
    pub fn new(batch: BatchConfig) -> Result<Self, OrderingError> {
        batch.validate()?;
        Ok(OrderingCluster {
            status: Role::ALL.map(|r| vec![InstanceStatus::Up; r.cardinality()]),
            log: Vec::new(),
            pending: VecDeque::new(),
            pending_bytes: 0,
            seen: HashSet::new(),
            batch,
        })
    }

    pub fn batch_config(&self) -> &BatchConfig {
        &self.batch
    }

    pub fn status(&self, role: Role) -> &[InstanceStatus] {
        &self.status[role_slot(role)]
    }

    pub fn down_count(&self, role: Role) -> usize {
        self.status(role).iter().filter(|s| **s == InstanceStatus::Down).count()
    }

    pub fn up_instances(&self, role: Role) -> Vec<usize> {
        self.status(role)
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == InstanceStatus::Up)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_available(&self) -> bool {
        availability(&Role::ALL.map(|r| (r, self.status(r))))
    }

    pub fn set_instance_status(&mut self, role: Role, index: usize, status: InstanceStatus) -> Result<(), OrderingError> {
        let slot = &mut self.status[role_slot(role)];
        let n = slot.len();
        let s = slot.get_mut(index).ok_or_else(|| {
            OrderingError::InvalidArgument(format!("{role} index {index} out of range 0..{n}"))
        })?;
        *s = status;
        Ok(())
    }

    pub fn submit(&mut self, envelope: Envelope) -> SubmitOutcome {
        if !self.is_available() {
            return SubmitOutcome::Unavailable;
        }
        if !self.seen.insert(envelope.transaction.tx_id) {
            return SubmitOutcome::Duplicate;
        }
        self.pending_bytes += envelope.size();
        self.pending.push_back(self.log.len());
        self.log.push(envelope);
        SubmitOutcome::Accepted
    }

    pub fn log(&self) -> &[Envelope] {
        &self.log
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Time at which the oldest pending envelope reaches the batch timeout.
    pub fn next_cut_deadline(&self) -> Option<SimTime> {
        self.pending
            .front()
            .map(|&i| self.log[i].received_at + self.batch.batch_timeout())
    }

    /// Cuts one batch if a count, size or age trigger holds at `now`.
    pub fn cut_batch(&mut self, now: SimTime) -> Option<Vec<Envelope>> {
        let &oldest = self.pending.front()?;
        let count_hit = self.pending.len() >= self.batch.max_message_count as usize;
        let bytes_hit = self.pending_bytes >= self.batch.max_batch_bytes;
        let age_hit = now.saturating_sub(self.log[oldest].received_at) >= self.batch.batch_timeout();
        if !(count_hit || bytes_hit || age_hit) {
            return None;
        }
        let mut out = Vec::new();
        let mut bytes = 0u64;
        while let Some(&i) = self.pending.front() {
            if out.len() >= self.batch.max_message_count as usize || bytes >= self.batch.max_batch_bytes {
                break;
            }
            self.pending.pop_front();
            let e = self.log[i].clone();
            bytes += e.size();
            out.push(e);
        }
        self.pending_bytes -= bytes;
        Some(out)
    }
}

/// Seals `batch` on top of `prev_tip` (number, header hash); `None` seals the first block.
pub fn seal_block(
    batch: &[Envelope],
    prev_tip: Option<(u64, Digest)>,
    sealer: &KeyPair,
) -> Result<Block, OrderingError> {
    if batch.is_empty() {
        return Err(OrderingError::InvalidArgument("cannot seal an empty batch".into()));
    }
    let (number, prev_hash) = match prev_tip {
        Some((n, h)) => (n + 1, h),
        None => (0, Digest::ZERO),
    };
    let transactions: Vec<Arc<Transaction>> = batch.iter().map(|e| Arc::clone(&e.transaction)).collect();
    let data_hash = compute_data_hash(&transactions);
    let header = BlockHeader {
        number,
        prev_hash,
        data_hash,
    };
    let sealer_signature = sealer.sign(compute_block_hash(&header).as_bytes());
    Ok(Block {
        number,
        prev_hash,
        data_hash,
        transactions,
        sealer_signature,
    })
}
