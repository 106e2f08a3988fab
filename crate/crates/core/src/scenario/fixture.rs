//! Keys, medical centers and the preloaded ledger every scenario starts from.

use std::sync::Arc;

use serde_json::json;

use super::ScenarioError;
use crate::chaincode::{register_certificate, register_medical_center, ChaincodeContext, MedicalCenterRecord};
use crate::credential::{generate_did, CertificateHash, Did, KeyPair};
use crate::encoding::{Digest, Encoder};
use crate::ledger::{Chain, EndorsementPolicy, Ledger, MemberStateId, Transaction, ROSTER};
use crate::ordering::{seal_block, Envelope};
use crate::netsim::SimTime;

const PRELOAD_BLOCK_TXS: usize = 100;

pub struct MemberState {
    pub id: MemberStateId,
    pub key: KeyPair,
    pub center: MedicalCenterRecord,
    pub issuer_key: KeyPair,
}

/// Deterministic actors and a genesis ledger holding one medical center per
/// member state followed by `preloaded` certificate anchors spread
/// round-robin over the member states.
pub struct Fixture {
    pub seed: u64,
    pub members: Vec<MemberState>,
    pub sealer: KeyPair,
    pub policy: Arc<EndorsementPolicy>,
    pub genesis: Ledger,
    pub preloaded: Vec<CertificateHash>,
}

fn seeded(tag: &str, seed: u64, parts: &[&[u8]]) -> Digest {
    let mut e = Encoder::tagged(tag);
    e.put_u64(seed);
    for p in parts {
        e.put_bytes(p);
    }
    e.digest()
}

impl Fixture {
    pub fn new(seed: u64, preloaded: usize) -> Result<Self, ScenarioError> {
        let seed_bytes = seed.to_be_bytes();
        let mut members = Vec::with_capacity(ROSTER.len());
        for ms in MemberStateId::all() {
            let code = ms.code().to_ascii_lowercase();
            let owner = Did::new("vax", &format!("ms-{code}"))?;
            let key = KeyPair::from_seed(owner, seeded("vaxledger/fixture/ms-key/v1", seed, &[code.as_bytes()]).as_bytes());
            let issuer = generate_did("vax", &[seed_bytes.as_slice(), code.as_bytes()].concat())?;
            let issuer_key = KeyPair::from_seed(
                issuer.clone(),
                seeded("vaxledger/fixture/issuer-key/v1", seed, &[code.as_bytes()]).as_bytes(),
            );
            let center = MedicalCenterRecord {
                center_id: format!("{code}-central"),
                ms,
                name: format!("Central vaccination centre {}", ms.code()),
                address: format!("Ministry of Health, {}", ms.code()),
                issuer_did: issuer,
            };
            members.push(MemberState {
                id: ms,
                key,
                center,
                issuer_key,
            });
        }
        let sealer = KeyPair::from_seed(
            Did::new("vax", "ordering-service")?,
            seeded("vaxledger/fixture/sealer-key/v1", seed, &[]).as_bytes(),
        );
        let policy = Arc::new(EndorsementPolicy::new(
            members.iter().map(|m| (m.id, m.key.public_key())),
        ));
        let mut genesis = Ledger::new(Chain::with_sealer(sealer.public_key()));

        let mut txs = Vec::new();
        for m in &members {
            let ctx = ChaincodeContext::new(m.id, true, genesis.state());
            let resp = register_medical_center(ctx, &m.center)?;
            let tx_id = seeded("vaxledger/fixture/center-tx/v1", seed, &[m.id.code().as_bytes()]);
            txs.push(Arc::new(resp.into_transaction(tx_id, m.id, &m.key)));
        }
        commit_preload(&mut genesis, &txs, &sealer, &policy)?;

        let mut hashes = Vec::with_capacity(preloaded);
        for chunk_start in (0..preloaded).step_by(PRELOAD_BLOCK_TXS) {
            let mut txs = Vec::new();
            for j in chunk_start..(chunk_start + PRELOAD_BLOCK_TXS).min(preloaded) {
                let m = &members[j % members.len()];
                let j_bytes = (j as u64).to_be_bytes();
                let hash = CertificateHash::from(seeded("vaxledger/fixture/anchor/v1", seed, &[&j_bytes]));
                let ctx = ChaincodeContext::new(m.id, true, genesis.state());
                let resp = register_certificate(
                    ctx,
                    hash.as_bytes(),
                    &m.center.issuer_did,
                    json!({ "product": "Comirnaty", "doses": 2 }),
                )?;
                let tx_id = seeded("vaxledger/fixture/anchor-tx/v1", seed, &[&j_bytes]);
                txs.push(Arc::new(resp.into_transaction(tx_id, m.id, &m.key)));
                hashes.push(hash);
            }
            commit_preload(&mut genesis, &txs, &sealer, &policy)?;
        }

        Ok(Fixture {
            seed,
            members,
            sealer,
            policy,
            genesis,
            preloaded: hashes,
        })
    }

    pub fn member(&self, ms: MemberStateId) -> &MemberState {
        &self.members[ms.index()]
    }

    pub fn genesis_tx_count(&self) -> usize {
        self.genesis.valid_tx_count()
    }
}

fn commit_preload(
    ledger: &mut Ledger,
    txs: &[Arc<Transaction>],
    sealer: &KeyPair,
    policy: &EndorsementPolicy,
) -> Result<(), ScenarioError> {
    let batch: Vec<Envelope> = txs.iter().map(|t| Envelope::new(Arc::clone(t), SimTime::ZERO)).collect();
    let tip = ledger.chain().tip_hash().map(|h| (ledger.height() - 1, h));
    let block = seal_block(&batch, tip, sealer).map_err(|e| ScenarioError::Config(e.to_string()))?;
    let flags = ledger.commit(Arc::new(block), policy)?;
    if let Some(bad) = flags.iter().find(|f| !f.is_valid()) {
        return Err(ScenarioError::Config(format!("preload transaction rejected: {}", bad.as_str())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preload_is_deterministic_and_complete() {
        let a = Fixture::new(7, 150).unwrap();
        let b = Fixture::new(7, 150).unwrap();
        assert_eq!(a.genesis.state().digest(), b.genesis.state().digest());
        assert_eq!(a.preloaded, b.preloaded);
        assert_eq!(a.genesis_tx_count(), 27 + 150);
        assert_eq!(a.genesis.height(), 3);
        let c = Fixture::new(8, 150).unwrap();
        assert_ne!(a.genesis.state().digest(), c.genesis.state().digest());
    }
}
