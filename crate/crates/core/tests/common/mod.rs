#![allow(dead_code)]

use std::sync::Arc;

use serde_json::json;
use vaxledger_core::chaincode::register_certificate;
use vaxledger_core::credential::CertificateHash;
use vaxledger_core::ledger::{Validity, ROSTER};
use vaxledger_core::ordering::{seal_block, Envelope};
use vaxledger_core::scenario::Fixture;
use vaxledger_core::{ChaincodeContext, Digest, Ledger, MemberStateId, SimTime, Transaction};

pub fn ms(i: usize) -> MemberStateId {
    MemberStateId::from_index(i % ROSTER.len())
}

pub fn tx_id(tag: &str, n: u64) -> Digest {
    let mut b = tag.as_bytes().to_vec();
    b.extend_from_slice(&n.to_be_bytes());
    Digest::of(&b)
}

pub fn cert_hash(n: u64) -> CertificateHash {
    CertificateHash::from(tx_id("cert", n))
}

/// Endorsed anchor transaction proposed by `submitter` against `ledger`'s state.
pub fn anchor_tx(fx: &Fixture, ledger: &Ledger, submitter: MemberStateId, hash: &CertificateHash, n: u64) -> Arc<Transaction> {
    let m = fx.member(submitter);
    let ctx = ChaincodeContext::new(submitter, true, ledger.state());
    let resp = register_certificate(ctx, hash.as_bytes(), &m.center.issuer_did, json!({ "doses": 2 })).unwrap();
    Arc::new(resp.into_transaction(tx_id("anchor", n), submitter, &m.key))
}

/// Seals `txs` on top of `ledger` and commits the block.
pub fn commit(fx: &Fixture, ledger: &mut Ledger, txs: &[Arc<Transaction>]) -> Vec<Validity> {
    let batch: Vec<Envelope> = txs.iter().map(|t| Envelope::new(Arc::clone(t), SimTime::ZERO)).collect();
    let tip = ledger.chain().tip_hash().map(|h| (ledger.height() - 1, h));
    let block = seal_block(&batch, tip, &fx.sealer).unwrap();
    ledger.commit(Arc::new(block), &fx.policy).unwrap().to_vec()
}
