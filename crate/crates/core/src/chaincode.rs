//! Smart-contract layer: message conformity, access control, and the
//! register/verify operations over certificate anchors and medical centers.
//!
//! Chaincode never mutates state. Each invocation runs against a read snapshot
//! and returns the read and write sets it produced; the ledger's commit-time
//! validation decides whether those writes land.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::credential::{CertificateHash, Did, KeyPair};
use crate::encoding::{Digest, Encoder};
use crate::ledger::{
    cert_key, center_key, get_record, rich_query, CertificateRecord, LedgerError,
    MemberStateId, Query, ReadEntry, RecordKind, Transaction, WorldState, WriteEntry,
};

#[derive(Debug, Error)]
pub enum ChaincodeError {
    #[error("caller is not allowed to act for this member state")]
    AccessDenied,
    #[error("nonconformant message: {0}")]
    NonconformantMessage(String),
    #[error("issuer is not a registered medical center of the caller")]
    UnknownIssuer,
    #[error("already registered")]
    AlreadyRegistered,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Operation name plus raw arguments. Encoded as the length-prefixed name,
/// the argument count (u64), then each length-prefixed argument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChaincodeCall {
    pub name: String,
    pub args: Vec<Vec<u8>>,
}

impl ChaincodeCall {
    pub fn new(name: &str, args: Vec<Vec<u8>>) -> Self {
        ChaincodeCall {
            name: name.to_owned(),
            args,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.put_str(&self.name).put_u64(self.args.len() as u64);
        for a in &self.args {
            enc.put_bytes(a);
        }
        enc.finish()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CallRepr {
    name: String,
    args: Vec<String>,
}

impl Serialize for ChaincodeCall {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        CallRepr {
            name: self.name.clone(),
            args: self.args.iter().map(hex::encode).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChaincodeCall {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = CallRepr::deserialize(d)?;
        let args = r
            .args
            .iter()
            .map(hex::decode)
            .collect::<Result<_, _>>()
            .map_err(serde::de::Error::custom)?;
        Ok(ChaincodeCall { name: r.name, args })
    }
}

pub const OP_REGISTER_CENTER: &str = "registerMedicalCenter";
pub const OP_REGISTER_CERTIFICATE: &str = "registerCertificate";

/// Invocation context. Every state read goes through [`ChaincodeContext::read`]
/// so it lands in the read set.
pub struct ChaincodeContext<'a> {
    pub caller: MemberStateId,
    pub caller_signature_valid: bool,
    state: &'a WorldState,
    reads: Vec<ReadEntry>,
    writes: Vec<WriteEntry>,
}

impl<'a> ChaincodeContext<'a> {
    pub fn new(caller: MemberStateId, caller_signature_valid: bool, state: &'a WorldState) -> Self {
        ChaincodeContext {
            caller,
            caller_signature_valid,
            state,
            reads: Vec::new(),
            writes: Vec::new(),
        }
    }

    pub fn state(&self) -> &WorldState {
        self.state
    }

    pub fn read(&mut self, key: &str) -> Option<&'a Value> {
        let entry = self.state.get(key);
        if !self.reads.iter().any(|r| r.key == key) {
            self.reads.push(ReadEntry {
                key: key.to_owned(),
                version: entry.map(|e| e.version),
            });
        }
        entry.map(|e| &e.value)
    }

    pub fn write(&mut self, key: String, value: Value) {
        self.writes.push(WriteEntry { key, value });
    }

    fn finish(self, operation: ChaincodeCall) -> ProposalResponse {
        ProposalResponse {
            operation,
            read_set: self.reads,
            write_set: self.writes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalResponse {
    pub operation: ChaincodeCall,
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
}

impl ProposalResponse {
    /// Wraps the simulated read/write sets in a transaction endorsed by `submitter`.
    pub fn into_transaction(self, tx_id: Digest, submitter: MemberStateId, key: &KeyPair) -> Transaction {
        let mut tx = Transaction::new(tx_id, submitter, self.operation, self.read_set, self.write_set);
        tx.endorse(submitter, key);
        tx
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedicalCenterRecord {
    pub center_id: String,
    pub ms: MemberStateId,
    pub name: String,
    pub address: String,
    pub issuer_did: Did,
}

impl MedicalCenterRecord {
    pub fn key(&self) -> String {
        center_key(self.ms, &self.center_id)
    }

    fn conform(&self) -> Result<(), ChaincodeError> {
        let bad = |m: &str| Err(ChaincodeError::NonconformantMessage(m.to_owned()));
        if self.center_id.is_empty() || !self.center_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return bad("center_id must be a non-empty [A-Za-z0-9_-] token");
        }
        if self.name.trim().is_empty() {
            return bad("empty name");
        }
        if self.address.trim().is_empty() {
            return bad("empty address");
        }
        Ok(())
    }
}

pub fn register_medical_center(
    mut ctx: ChaincodeContext<'_>,
    center: &MedicalCenterRecord,
) -> Result<ProposalResponse, ChaincodeError> {
    if !ctx.caller_signature_valid || ctx.caller != center.ms {
        return Err(ChaincodeError::AccessDenied);
    }
    center.conform()?;
    let key = center.key();
    if ctx.read(&key).is_some() {
        return Err(ChaincodeError::AlreadyRegistered);
    }
    ctx.write(key, serde_json::to_value(center).expect("record serializes"));
    let call = ChaincodeCall::new(
        OP_REGISTER_CENTER,
        vec![serde_json::to_vec(center).expect("record serializes")],
    );
    Ok(ctx.finish(call))
}

pub fn register_certificate(
    mut ctx: ChaincodeContext<'_>,
    cert_hash: &[u8],
    issuer_did: &Did,
    metadata: Value,
) -> Result<ProposalResponse, ChaincodeError> {
    if !ctx.caller_signature_valid {
        return Err(ChaincodeError::AccessDenied);
    }
    let hash = CertificateHash::from_bytes(cert_hash)
        .map_err(|e| ChaincodeError::NonconformantMessage(e.to_string()))?;
    if !metadata.is_object() {
        return Err(ChaincodeError::NonconformantMessage(
            "metadata must be a JSON object".into(),
        ));
    }
    let centers = rich_query(
        ctx.state(),
        &Query::new(RecordKind::MedicalCenter)
            .within(ctx.caller)
            .field("issuer_did", issuer_did.to_string()),
    )?;
    let Some((center, _)) = centers.matches.first() else {
        return Err(ChaincodeError::UnknownIssuer);
    };
    let center = center.clone();
    ctx.read(&center);

    let key = cert_key(ctx.caller, &hash);
    if ctx.read(&key).is_some() {
        return Err(ChaincodeError::AlreadyRegistered);
    }
    let caller = ctx.caller;
    ctx.write(
        key,
        CertificateRecord::document(&hash, caller, issuer_did, metadata.clone()),
    );
    let call = ChaincodeCall::new(
        OP_REGISTER_CERTIFICATE,
        vec![
            hash.as_bytes().to_vec(),
            issuer_did.to_string().into_bytes(),
            crate::ledger::canonical_json(&metadata),
        ],
    );
    Ok(ctx.finish(call))
}

/// How `verify_certificate` finds a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Content query over every certificate record, in insertion order.
    #[default]
    WorstCaseScan,
    /// Direct key lookups, caller's namespace first, then the rest of the roster.
    ExactLookup,
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryMode::WorstCaseScan => "worst_case_scan",
            QueryMode::ExactLookup => "exact_lookup",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VerifyOutcome {
    Found(CertificateRecord),
    NotFound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyResponse {
    pub outcome: VerifyOutcome,
    pub scan_count: usize,
}

/// Read-only lookup of an anchored certificate hash.
pub fn verify_certificate(
    ctx: &ChaincodeContext<'_>,
    cert_hash: &CertificateHash,
    mode: QueryMode,
) -> Result<VerifyResponse, ChaincodeError> {
    match mode {
        QueryMode::WorstCaseScan => {
            let q = Query::new(RecordKind::Certificate).field("cert_hash", cert_hash.to_hex());
            let r = rich_query(ctx.state(), &q)?;
            let outcome = match r.matches.last() {
                Some((k, e)) => VerifyOutcome::Found(CertificateRecord::from_entry(k, e)?),
                None => VerifyOutcome::NotFound,
            };
            Ok(VerifyResponse {
                outcome,
                scan_count: r.scan_count,
            })
        }
        QueryMode::ExactLookup => {
            let order = std::iter::once(ctx.caller)
                .chain(MemberStateId::all().filter(|m| *m != ctx.caller));
            let mut scans = 0;
            for ms in order {
                let l = get_record(ctx.state(), &cert_key(ms, cert_hash));
                scans += l.scan_count;
                if let Some(rec) = l.record {
                    return Ok(VerifyResponse {
                        outcome: VerifyOutcome::Found(rec),
                        scan_count: scans,
                    });
                }
            }
            Ok(VerifyResponse {
                outcome: VerifyOutcome::NotFound,
                scan_count: scans,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credential::generate_did;
    use crate::ledger::{apply_block, compute_data_hash, Block, EndorsementPolicy, Version};
    use serde_json::json;
    use std::sync::Arc;

    fn ms(code: &str) -> MemberStateId {
        MemberStateId::new(code).unwrap()
    }

    fn peer_key(m: MemberStateId) -> KeyPair {
        KeyPair::from_seed(generate_did("ms", m.code().as_bytes()).unwrap(), m.code().as_bytes())
    }

    fn policy() -> EndorsementPolicy {
        EndorsementPolicy::new(MemberStateId::all().map(|m| (m, peer_key(m).public_key())))
    }

    fn center(m: &str) -> MedicalCenterRecord {
        MedicalCenterRecord {
            center_id: "charite".into(),
            ms: ms(m),
            name: "Charité".into(),
            address: "Charitéplatz 1, Berlin".into(),
            issuer_did: generate_did("center", format!("{m}-charite").as_bytes()).unwrap(),
        }
    }

    fn commit(state: &mut WorldState, number: u64, p: ProposalResponse, submitter: &str, n: u8) -> bool {
        let tx = p.into_transaction(Digest::of(&[n, number as u8]), ms(submitter), &peer_key(ms(submitter)));
        let txs = vec![Arc::new(tx)];
        let b = Block {
            number,
            prev_hash: Digest::ZERO,
            data_hash: compute_data_hash(&txs),
            transactions: txs,
            sealer_signature: vec![],
        };
        apply_block(state, &b, &policy())[0].is_valid()
    }

    #[test]
    fn call_encoding_is_byte_stable() {
        let c = ChaincodeCall::new("op", vec![vec![1, 2], vec![]]);
        assert_eq!(
            c.encode(),
            vec![0, 0, 0, 2, b'o', b'p', 0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 0, 0, 0, 0]
        );
    }

    #[test]
    fn center_registration_writes_own_namespace() {
        let s = WorldState::new();
        let p = register_medical_center(ChaincodeContext::new(ms("DE"), true, &s), &center("DE")).unwrap();
        assert_eq!(p.write_set.len(), 1);
        assert_eq!(p.write_set[0].key, "DE/center/charite");
        assert_eq!(p.read_set, vec![ReadEntry { key: "DE/center/charite".into(), version: None }]);
    }

    #[test]
    fn center_registration_access_and_conformity() {
        let s = WorldState::new();
        assert!(matches!(
            register_medical_center(ChaincodeContext::new(ms("FR"), true, &s), &center("DE")),
            Err(ChaincodeError::AccessDenied)
        ));
        assert!(matches!(
            register_medical_center(ChaincodeContext::new(ms("DE"), false, &s), &center("DE")),
            Err(ChaincodeError::AccessDenied)
        ));
        let mut c = center("DE");
        c.name = String::new();
        assert!(matches!(
            register_medical_center(ChaincodeContext::new(ms("DE"), true, &s), &c),
            Err(ChaincodeError::NonconformantMessage(_))
        ));
    }

    #[test]
    fn certificate_register_then_verify() {
        let mut s = WorldState::new();
        let c = center("DE");
        let p = register_medical_center(ChaincodeContext::new(ms("DE"), true, &s), &c).unwrap();
        assert!(commit(&mut s, 0, p, "DE", 0));

        let h = CertificateHash::from_bytes(&[9u8; 32]).unwrap();
        let p = register_certificate(
            ChaincodeContext::new(ms("DE"), true, &s),
            h.as_bytes(),
            &c.issuer_did,
            json!({"product": "Comirnaty"}),
        )
        .unwrap();
        assert!(p.read_set.iter().any(|r| r.key == "DE/center/charite" && r.version == Some(Version { block: 0, tx: 0 })));
        assert!(commit(&mut s, 1, p, "DE", 1));

        let ctx = ChaincodeContext::new(ms("DE"), true, &s);
        for mode in [QueryMode::WorstCaseScan, QueryMode::ExactLookup] {
            let r = verify_certificate(&ctx, &h, mode).unwrap();
            match r.outcome {
                VerifyOutcome::Found(rec) => {
                    assert_eq!(rec.cert_hash, h);
                    assert_eq!(rec.issuer_did, c.issuer_did);
                    assert_eq!(rec.registered_at, Version { block: 1, tx: 0 });
                }
                VerifyOutcome::NotFound => panic!("expected record"),
            }
        }
        let other = CertificateHash::from_bytes(&[8u8; 32]).unwrap();
        assert_eq!(
            verify_certificate(&ctx, &other, QueryMode::WorstCaseScan).unwrap().outcome,
            VerifyOutcome::NotFound
        );

        let again = register_certificate(
            ChaincodeContext::new(ms("DE"), true, &s),
            h.as_bytes(),
            &c.issuer_did,
            json!({}),
        );
        assert!(matches!(again, Err(ChaincodeError::AlreadyRegistered)));
    }

    #[test]
    fn certificate_register_errors() {
        let mut s = WorldState::new();
        let c = center("DE");
        let p = register_medical_center(ChaincodeContext::new(ms("DE"), true, &s), &c).unwrap();
        assert!(commit(&mut s, 0, p, "DE", 0));
        assert!(matches!(
            register_certificate(ChaincodeContext::new(ms("DE"), true, &s), &[1u8; 31], &c.issuer_did, json!({})),
            Err(ChaincodeError::NonconformantMessage(_))
        ));
        let stranger = generate_did("center", b"nobody").unwrap();
        assert!(matches!(
            register_certificate(ChaincodeContext::new(ms("DE"), true, &s), &[1u8; 32], &stranger, json!({})),
            Err(ChaincodeError::UnknownIssuer)
        ));
        // FR has no center with DE's issuer DID.
        assert!(matches!(
            register_certificate(ChaincodeContext::new(ms("FR"), true, &s), &[1u8; 32], &c.issuer_did, json!({})),
            Err(ChaincodeError::UnknownIssuer)
        ));
    }

    #[test]
    fn verify_is_read_only() {
        let mut s = WorldState::new();
        let c = center("DE");
        let p = register_medical_center(ChaincodeContext::new(ms("DE"), true, &s), &c).unwrap();
        commit(&mut s, 0, p, "DE", 0);
        let before = s.digest();
        let ctx = ChaincodeContext::new(ms("DE"), true, &s);
        verify_certificate(&ctx, &CertificateHash::from_bytes(&[0; 32]).unwrap(), QueryMode::WorstCaseScan).unwrap();
        assert_eq!(s.digest(), before);
    }
}
