//! One peer's view of the ledger: the hash-chained block sequence, the
//! versioned world state derived from it, and the disjunctive endorsement
//! policy used to validate transactions at commit time.
//!
//! Keys are namespaced by member state: `<ms>/<kind>/<id>`, where `kind` is
//! `cert` for certificate anchors and `center` for medical centers. A member
//! state may only write under its own prefix.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::chaincode::ChaincodeCall;
use crate::credential::{CertificateHash, Did, KeyPair, PublicKey};
use crate::encoding::{Digest, Encoder};

/// The 27 member states, ISO 3166-1 alpha-2.
pub const ROSTER: [&str; 27] = [
    "AT", "BE", "BG", "HR", "CY", "CZ", "DK", "EE", "FI", "FR", "DE", "GR", "HU", "IE", "IT",
    "LV", "LT", "LU", "MT", "NL", "PL", "PT", "RO", "SK", "SI", "ES", "SE",
];

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("unknown member state `{0}`")]
    UnknownMemberState(String),
    #[error("block {got} out of order, expected {expected}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("block {0} does not link to the current tip")]
    BrokenChain(u64),
    #[error("block {0} data hash does not match its transactions")]
    DataHashMismatch(u64),
    #[error("block {0} carries an invalid sealer signature")]
    BadSealerSignature(u64),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("malformed record at `{0}`")]
    MalformedRecord(String),
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemberStateId([u8; 2]);

impl MemberStateId {
    pub fn new(code: &str) -> Result<Self, LedgerError> {
        let pos = ROSTER
            .iter()
            .position(|c| *c == code)
            .ok_or_else(|| LedgerError::UnknownMemberState(code.to_owned()))?;
        Ok(Self::from_index(pos))
    }

    /// Panics if `index >= 27`.
    pub fn from_index(index: usize) -> Self {
        let b = ROSTER[index].as_bytes();
        MemberStateId([b[0], b[1]])
    }

    pub fn all() -> impl Iterator<Item = MemberStateId> {
        (0..ROSTER.len()).map(Self::from_index)
    }

    pub fn code(&self) -> &str {
        std::str::from_utf8(&self.0).expect("roster codes are ASCII")
    }

    pub fn index(&self) -> usize {
        ROSTER.iter().position(|c| *c == self.code()).expect("constructed from roster")
    }

    /// `<code>/`
    pub fn namespace(&self) -> String {
        format!("{}/", self.code())
    }
}

impl fmt::Display for MemberStateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl fmt::Debug for MemberStateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MS({})", self.code())
    }
}

impl FromStr for MemberStateId {
    type Err = LedgerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl Serialize for MemberStateId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for MemberStateId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::new(&s).map_err(serde::de::Error::custom)
    }
}

/// Member state owning `key`, if the key starts with a roster prefix.
pub fn namespace_of(key: &str) -> Option<MemberStateId> {
    let (code, rest) = key.split_once('/')?;
    if rest.is_empty() {
        return None;
    }
    MemberStateId::new(code).ok()
}

pub fn cert_key(ms: MemberStateId, hash: &CertificateHash) -> String {
    format!("{}/cert/{}", ms.code(), hash.to_hex())
}

pub fn center_key(ms: MemberStateId, center_id: &str) -> String {
    format!("{}/center/{}", ms.code(), center_id)
}

/// Position of the transaction that last wrote a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Version {
    pub block: u64,
    pub tx: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadEntry {
    pub key: String,
    pub version: Option<Version>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WriteEntry {
    pub key: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endorsement {
    pub ms: MemberStateId,
    #[serde(with = "hex_vec")]
    pub signature: Vec<u8>,
}

mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub tx_id: Digest,
    pub submitter: MemberStateId,
    pub operation: ChaincodeCall,
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
    pub endorsements: Vec<Endorsement>,
    pub payload_size: u64,
}

impl Transaction {
    pub fn new(
        tx_id: Digest,
        submitter: MemberStateId,
        operation: ChaincodeCall,
        read_set: Vec<ReadEntry>,
        write_set: Vec<WriteEntry>,
    ) -> Self {
        let mut tx = Transaction {
            tx_id,
            submitter,
            operation,
            read_set,
            write_set,
            endorsements: Vec::new(),
            payload_size: 0,
        };
        tx.payload_size = tx.encode().len() as u64;
        tx
    }

    /// Bytes covered by endorsement signatures: everything except the endorsements.
    pub fn body_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::tagged("vaxledger/tx-body/v1");
        enc.put_bytes(self.tx_id.as_bytes())
            .put_str(self.submitter.code())
            .put_bytes(&self.operation.encode());
        enc.put_u64(self.read_set.len() as u64);
        for r in &self.read_set {
            enc.put_str(&r.key)
                .put_opt_u64(r.version.map(|v| v.block))
                .put_opt_u64(r.version.map(|v| u64::from(v.tx)));
        }
        enc.put_u64(self.write_set.len() as u64);
        for w in &self.write_set {
            enc.put_str(&w.key).put_bytes(&canonical_json(&w.value));
        }
        enc.finish()
    }

    /// Full wire encoding: body followed by the endorsements.
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.put_bytes(&self.body_bytes());
        enc.put_u64(self.endorsements.len() as u64);
        for e in &self.endorsements {
            enc.put_str(e.ms.code()).put_bytes(&e.signature);
        }
        enc.finish()
    }

    pub fn endorse(&mut self, ms: MemberStateId, key: &KeyPair) {
        let signature = key.sign(&self.body_bytes());
        self.endorsements.push(Endorsement { ms, signature });
        self.payload_size = self.encode().len() as u64;
    }
}

/// JSON with object keys in sorted order (serde_json's default map is a BTreeMap).
pub fn canonical_json(v: &Value) -> Vec<u8> {
    serde_json::to_vec(v).expect("JSON values always serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub number: u64,
    pub prev_hash: Digest,
    pub data_hash: Digest,
}

pub fn compute_block_hash(header: &BlockHeader) -> Digest {
    let mut enc = Encoder::tagged("vaxledger/block-header/v1");
    enc.put_u64(header.number)
        .put_bytes(header.prev_hash.as_bytes())
        .put_bytes(header.data_hash.as_bytes());
    enc.digest()
}

pub fn compute_data_hash(transactions: &[Arc<Transaction>]) -> Digest {
    let mut enc = Encoder::tagged("vaxledger/block-data/v1");
    enc.put_u64(transactions.len() as u64);
    for tx in transactions {
        enc.put_bytes(&tx.encode());
    }
    enc.digest()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub number: u64,
    pub prev_hash: Digest,
    pub data_hash: Digest,
    pub transactions: Vec<Arc<Transaction>>,
    pub sealer_signature: Vec<u8>,
}

impl Block {
    pub fn header(&self) -> BlockHeader {
        BlockHeader {
            number: self.number,
            prev_hash: self.prev_hash,
            data_hash: self.data_hash,
        }
    }

    pub fn hash(&self) -> Digest {
        compute_block_hash(&self.header())
    }

    pub fn data_hash_matches(&self) -> bool {
        compute_data_hash(&self.transactions) == self.data_hash
    }

    pub fn verify_sealer(&self, sealer: &PublicKey) -> bool {
        sealer.verify(self.hash().as_bytes(), &self.sealer_signature)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Chain {
    blocks: Vec<Arc<Block>>,
    tip: Option<Digest>,
    sealer: Option<PublicKey>,
    // Sealer checks already passed, keyed by (header hash, signature) digest.
    // Shared between clones so replicas of one chain verify each seal once.
    seal_memo: Arc<Mutex<HashSet<Digest>>>,
}

impl Chain {
    pub fn new() -> Self {
        Self::default()
    }

    /// A chain that also checks every block's sealer signature.
    pub fn with_sealer(sealer: PublicKey) -> Self {
        Chain {
            sealer: Some(sealer),
            ..Self::default()
        }
    }

    pub fn len(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip_hash(&self) -> Option<Digest> {
        self.tip
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    pub fn append_block(&mut self, block: Arc<Block>) -> Result<(), LedgerError> {
        if block.number != self.len() {
            return Err(LedgerError::OutOfOrder {
                expected: self.len(),
                got: block.number,
            });
        }
        if block.prev_hash != self.tip.unwrap_or(Digest::ZERO) {
            return Err(LedgerError::BrokenChain(block.number));
        }
        if !block.data_hash_matches() {
            return Err(LedgerError::DataHashMismatch(block.number));
        }
        let hash = block.hash();
        if let Some(sealer) = &self.sealer {
            let mut enc = Encoder::new();
            enc.put_bytes(hash.as_bytes()).put_bytes(&block.sealer_signature);
            let key = enc.digest();
            if !self.seal_memo.lock().expect("memo poisoned").contains(&key) {
                if !block.verify_sealer(sealer) {
                    return Err(LedgerError::BadSealerSignature(block.number));
                }
                self.seal_memo.lock().expect("memo poisoned").insert(key);
            }
        }
        self.tip = Some(hash);
        self.blocks.push(block);
        Ok(())
    }

    /// Re-derives every link and data hash from scratch.
    pub fn verify(&self) -> Result<(), LedgerError> {
        let mut prev = Digest::ZERO;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.number != i as u64 {
                return Err(LedgerError::OutOfOrder {
                    expected: i as u64,
                    got: b.number,
                });
            }
            if b.prev_hash != prev {
                return Err(LedgerError::BrokenChain(b.number));
            }
            if !b.data_hash_matches() {
                return Err(LedgerError::DataHashMismatch(b.number));
            }
            prev = b.hash();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEntry {
    pub value: Value,
    pub version: Version,
}

/// Versioned key-value store. Iteration follows first-insertion order, which
/// an overwrite does not change.
#[derive(Debug, Clone, Default)]
pub struct WorldState {
    entries: IndexMap<String, StateEntry>,
    by_collection: HashMap<String, Vec<usize>>,
    by_kind: HashMap<String, Vec<usize>>,
    committed_tx: HashSet<Digest>,
}

fn split_collection(key: &str) -> Option<(&str, &str)> {
    let mut parts = key.splitn(3, '/');
    let ms = parts.next()?;
    let kind = parts.next()?;
    parts.next()?;
    Some((ms, kind))
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&StateEntry> {
        self.entries.get(key)
    }

    pub fn version_of(&self, key: &str) -> Option<Version> {
        self.entries.get(key).map(|e| e.version)
    }

    pub fn put(&mut self, key: String, value: Value, version: Version) {
        let (index, previous) = self
            .entries
            .insert_full(key.clone(), StateEntry { value, version });
        if previous.is_none() {
            if let Some((ms, kind)) = split_collection(&key) {
                self.by_collection
                    .entry(format!("{ms}/{kind}"))
                    .or_default()
                    .push(index);
                self.by_kind.entry(kind.to_owned()).or_default().push(index);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &StateEntry)> {
        self.entries.iter()
    }

    pub fn has_committed(&self, tx_id: &Digest) -> bool {
        self.committed_tx.contains(tx_id)
    }

    /// SHA-256 over every (key, value, version) in insertion order.
    pub fn digest(&self) -> Digest {
        let mut enc = Encoder::tagged("vaxledger/world-state/v1");
        for (k, e) in &self.entries {
            enc.put_str(k)
                .put_bytes(&canonical_json(&e.value))
                .put_u64(e.version.block)
                .put_u64(e.version.tx.into());
        }
        enc.digest()
    }

    fn scope(&self, scope: &QueryScope) -> &[usize] {
        let slice = match scope.ms {
            Some(ms) => self
                .by_collection
                .get(&format!("{}/{}", ms.code(), scope.kind.segment())),
            None => self.by_kind.get(scope.kind.segment()),
        };
        slice.map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordKind {
    Certificate,
    MedicalCenter,
}

impl RecordKind {
    pub fn segment(&self) -> &'static str {
        match self {
            RecordKind::Certificate => "cert",
            RecordKind::MedicalCenter => "center",
        }
    }

    pub fn fields(&self) -> &'static [&'static str] {
        match self {
            RecordKind::Certificate => &["cert_hash", "ms", "issuer_did", "metadata"],
            RecordKind::MedicalCenter => &["center_id", "ms", "name", "address", "issuer_did"],
        }
    }

    fn declares(&self, path: &str) -> bool {
        let head = path.split('.').next().unwrap_or(path);
        let nested = path.contains('.');
        self.fields()
            .iter()
            .any(|f| *f == head && (!nested || *f == "metadata"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryScope {
    pub ms: Option<MemberStateId>,
    pub kind: RecordKind,
}

/// Conjunction of field equality matches over one record kind. Field paths
/// may descend into `metadata` with dots (`metadata.product`).
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub scope: QueryScope,
    pub matches: Vec<(String, Value)>,
}

impl Query {
    pub fn new(kind: RecordKind) -> Self {
        Query {
            scope: QueryScope { ms: None, kind },
            matches: Vec::new(),
        }
    }

    pub fn within(mut self, ms: MemberStateId) -> Self {
        self.scope.ms = Some(ms);
        self
    }

    pub fn field(mut self, path: &str, value: impl Into<Value>) -> Self {
        self.matches.push((path.to_owned(), value.into()));
        self
    }

    pub fn matches(&self, doc: &Value) -> bool {
        self.matches
            .iter()
            .all(|(path, want)| lookup_path(doc, path) == Some(want))
    }
}

fn lookup_path<'a>(doc: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(doc, |v, seg| v.get(seg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub matches: Vec<(String, StateEntry)>,
    pub scan_count: usize,
}

/// Linear scan over the query's scope in insertion order.
pub fn rich_query(state: &WorldState, query: &Query) -> Result<QueryResult, LedgerError> {
    for (path, _) in &query.matches {
        if !query.scope.kind.declares(path) {
            return Err(LedgerError::InvalidQuery(format!(
                "`{path}` is not a declared {} field",
                query.scope.kind.segment()
            )));
        }
    }
    let scope = state.scope(&query.scope);
    let mut matches = Vec::new();
    for &i in scope {
        let (k, e) = state.entries.get_index(i).expect("index maintained on insert");
        if query.matches(&e.value) {
            matches.push((k.clone(), e.clone()));
        }
    }
    Ok(QueryResult {
        matches,
        scan_count: scope.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateRecord {
    pub cert_hash: CertificateHash,
    pub ms: MemberStateId,
    pub issuer_did: Did,
    pub registered_at: Version,
    pub metadata: Value,
}

impl CertificateRecord {
    /// Document written to the world state; `registered_at` is the entry's version.
    pub fn document(
        cert_hash: &CertificateHash,
        ms: MemberStateId,
        issuer_did: &Did,
        metadata: Value,
    ) -> Value {
        serde_json::json!({
            "cert_hash": cert_hash.to_hex(),
            "ms": ms.code(),
            "issuer_did": issuer_did.to_string(),
            "metadata": metadata,
        })
    }

    pub fn from_entry(key: &str, entry: &StateEntry) -> Result<Self, LedgerError> {
        let bad = || LedgerError::MalformedRecord(key.to_owned());
        let text = |f: &str| entry.value.get(f).and_then(Value::as_str).ok_or_else(bad);
        Ok(CertificateRecord {
            cert_hash: CertificateHash::from_hex(text("cert_hash")?).map_err(|_| bad())?,
            ms: MemberStateId::new(text("ms")?).map_err(|_| bad())?,
            issuer_did: text("issuer_did")?.parse().map_err(|_| bad())?,
            registered_at: entry.version,
            metadata: entry.value.get("metadata").cloned().unwrap_or(Value::Null),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordLookup {
    pub record: Option<CertificateRecord>,
    pub scan_count: usize,
}

/// Exact-key lookup.
pub fn get_record(state: &WorldState, key: &str) -> RecordLookup {
    let record = state
        .get(key)
        .and_then(|e| CertificateRecord::from_entry(key, e).ok());
    RecordLookup {
        record,
        scan_count: 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InvalidReason {
    BadSignature,
    ForeignNamespace,
    StaleRead,
    DuplicateTxId,
}

impl InvalidReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            InvalidReason::BadSignature => "bad-signature",
            InvalidReason::ForeignNamespace => "foreign-namespace",
            InvalidReason::StaleRead => "stale-read",
            InvalidReason::DuplicateTxId => "duplicate-tx-id",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Validity::Valid => "valid",
            Validity::Invalid(r) => r.as_str(),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "valid" => Validity::Valid,
            "bad-signature" => Validity::Invalid(InvalidReason::BadSignature),
            "foreign-namespace" => Validity::Invalid(InvalidReason::ForeignNamespace),
            "stale-read" => Validity::Invalid(InvalidReason::StaleRead),
            "duplicate-tx-id" => Validity::Invalid(InvalidReason::DuplicateTxId),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolicyKind {
    /// Each member state endorses its own transactions; nobody else's signature counts.
    #[default]
    DisjunctiveSelf,
}

/// Roster of member-state public keys under the self-endorsement rule.
///
/// Successful signature checks are memoized by (submitter, body, signature)
/// digest, so peers sharing one policy verify each transaction once.
#[derive(Debug, Default)]
pub struct EndorsementPolicy {
    pub kind: PolicyKind,
    roster: BTreeMap<MemberStateId, PublicKey>,
    verified: Mutex<HashSet<Digest>>,
}

impl Clone for EndorsementPolicy {
    fn clone(&self) -> Self {
        EndorsementPolicy {
            kind: self.kind,
            roster: self.roster.clone(),
            verified: Mutex::new(self.verified.lock().expect("memo poisoned").clone()),
        }
    }
}

impl EndorsementPolicy {
    pub fn new(roster: impl IntoIterator<Item = (MemberStateId, PublicKey)>) -> Self {
        EndorsementPolicy {
            kind: PolicyKind::DisjunctiveSelf,
            roster: roster.into_iter().collect(),
            verified: Mutex::default(),
        }
    }

    pub fn roster(&self) -> &BTreeMap<MemberStateId, PublicKey> {
        &self.roster
    }

    pub fn key_of(&self, ms: MemberStateId) -> Option<&PublicKey> {
        self.roster.get(&ms)
    }

    /// True iff the submitter itself endorsed the transaction with its registered key.
    pub fn accepts_signature(&self, tx: &Transaction) -> bool {
        let Some(key) = self.roster.get(&tx.submitter) else {
            return false;
        };
        let Some(e) = tx.endorsements.iter().find(|e| e.ms == tx.submitter) else {
            return false;
        };
        let body = tx.body_bytes();
        let mut enc = Encoder::new();
        enc.put_str(tx.submitter.code())
            .put_bytes(&body)
            .put_bytes(&e.signature);
        let memo_key = enc.digest();
        if self.verified.lock().expect("memo poisoned").contains(&memo_key) {
            return true;
        }
        let ok = key.verify(&body, &e.signature);
        if ok {
            self.verified.lock().expect("memo poisoned").insert(memo_key);
        }
        ok
    }
}

/// Checks, in order: submitter self-endorsement, namespace ownership of every
/// written key, and read-set versions against the current state.
pub fn validate_transaction(
    tx: &Transaction,
    policy: &EndorsementPolicy,
    state: &WorldState,
) -> Validity {
    if !policy.accepts_signature(tx) {
        return Validity::Invalid(InvalidReason::BadSignature);
    }
    if tx
        .write_set
        .iter()
        .any(|w| namespace_of(&w.key) != Some(tx.submitter))
    {
        return Validity::Invalid(InvalidReason::ForeignNamespace);
    }
    if tx
        .read_set
        .iter()
        .any(|r| state.version_of(&r.key) != r.version)
    {
        return Validity::Invalid(InvalidReason::StaleRead);
    }
    Validity::Valid
}

/// Validates each transaction against the state as updated by its predecessors
/// in the block and applies the valid ones.
pub fn apply_block(state: &mut WorldState, block: &Block, policy: &EndorsementPolicy) -> Vec<Validity> {
    let mut flags = Vec::with_capacity(block.transactions.len());
    for (i, tx) in block.transactions.iter().enumerate() {
        let validity = if state.committed_tx.contains(&tx.tx_id) {
            Validity::Invalid(InvalidReason::DuplicateTxId)
        } else {
            validate_transaction(tx, policy, state)
        };
        if validity.is_valid() {
            let version = Version {
                block: block.number,
                tx: i as u32,
            };
            for w in &tx.write_set {
                state.put(w.key.clone(), w.value.clone(), version);
            }
            state.committed_tx.insert(tx.tx_id);
        }
        flags.push(validity);
    }
    flags
}

/// Chain, state and per-transaction validity flags of one peer.
#[derive(Debug, Clone)]
pub struct Ledger {
    chain: Chain,
    state: WorldState,
    validity: Vec<Vec<Validity>>,
}

impl Ledger {
    pub fn new(chain: Chain) -> Self {
        Ledger {
            chain,
            state: WorldState::new(),
            validity: Vec::new(),
        }
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn validity(&self, block: u64) -> Option<&[Validity]> {
        self.validity.get(block as usize).map(Vec::as_slice)
    }

    pub fn height(&self) -> u64 {
        self.chain.len()
    }

    pub fn commit(
        &mut self,
        block: Arc<Block>,
        policy: &EndorsementPolicy,
    ) -> Result<&[Validity], LedgerError> {
        self.chain.append_block(block.clone())?;
        let flags = apply_block(&mut self.state, &block, policy);
        self.validity.push(flags);
        Ok(self.validity.last().expect("just pushed"))
    }

    pub fn valid_tx_count(&self) -> usize {
        self.validity.iter().flatten().filter(|v| v.is_valid()).count()
    }

    /// Rebuilds the state from genesis; used to check replay determinism.
    pub fn replay(&self, policy: &EndorsementPolicy) -> WorldState {
        let mut state = WorldState::new();
        for b in self.chain.blocks() {
            apply_block(&mut state, b, policy);
        }
        state
    }

    /// One JSON object per block, newline-delimited.
    pub fn export_snapshot<W: Write>(&self, mut out: W) -> Result<(), LedgerError> {
        for (b, flags) in self.chain.blocks().iter().zip(&self.validity) {
            let record = BlockRecord::from_block(b, flags);
            serde_json::to_writer(&mut out, &record).map_err(io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub const SNAPSHOT_SCHEMA: &str = "vaxledger.ledger.v1";

/// Snapshot line layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRecord {
    pub schema: String,
    pub number: u64,
    pub prev_hash: Digest,
    pub data_hash: Digest,
    pub header_hash: Digest,
    #[serde(with = "hex_vec")]
    pub sealer_signature: Vec<u8>,
    pub transactions: Vec<TxRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxRecord {
    pub tx: Transaction,
    pub validity: String,
}

impl BlockRecord {
    pub fn from_block(b: &Block, flags: &[Validity]) -> Self {
        BlockRecord {
            schema: SNAPSHOT_SCHEMA.to_owned(),
            number: b.number,
            prev_hash: b.prev_hash,
            data_hash: b.data_hash,
            header_hash: b.hash(),
            sealer_signature: b.sealer_signature.clone(),
            transactions: b
                .transactions
                .iter()
                .zip(flags)
                .map(|(tx, v)| TxRecord {
                    tx: (**tx).clone(),
                    validity: v.as_str().to_owned(),
                })
                .collect(),
        }
    }

    pub fn into_block(self) -> (Block, Vec<Validity>) {
        let mut flags = Vec::with_capacity(self.transactions.len());
        let mut txs = Vec::with_capacity(self.transactions.len());
        for t in self.transactions {
            flags.push(Validity::parse(&t.validity).unwrap_or(Validity::Valid));
            txs.push(Arc::new(t.tx));
        }
        (
            Block {
                number: self.number,
                prev_hash: self.prev_hash,
                data_hash: self.data_hash,
                transactions: txs,
                sealer_signature: self.sealer_signature,
            },
            flags,
        )
    }
}

/// Reads a snapshot back; the header hash recorded on each line must match.
pub fn read_snapshot<R: BufRead>(input: R) -> Result<Vec<(Block, Vec<Validity>)>, LedgerError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let snap = |reason: String| LedgerError::Snapshot { line: i + 1, reason };
        let rec: BlockRecord = serde_json::from_str(&line).map_err(|e| snap(e.to_string()))?;
        if rec.schema != SNAPSHOT_SCHEMA {
            return Err(snap(format!("unsupported schema `{}`", rec.schema)));
        }
        if rec.transactions.iter().any(|t| Validity::parse(&t.validity).is_none()) {
            return Err(snap("unknown validity flag".into()));
        }
        let recorded = rec.header_hash;
        let (block, flags) = rec.into_block();
        if block.hash() != recorded {
            return Err(snap("header hash mismatch".into()));
        }
        out.push((block, flags));
    }
    Ok(out)
}
