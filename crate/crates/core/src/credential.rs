//! Vaccination credentials and the decentralized identifiers they embed.
//!
//! A credential is signed by the issuing medical center over its canonical
//! body (every field except the proof). Its anchor on the ledger is
//! [`hash_credential`]: SHA-256 over the canonical body followed by the
//! canonical proof encoding.
//!
//! Canonical body, in order, each field length-prefixed (see [`crate::encoding`]):
//!
//! | # | field             | bytes                         |
//! |---|-------------------|-------------------------------|
//! | 0 | tag               | `vaxledger/credential/v1`     |
//! | 1 | context           | UTF-8                         |
//! | 2 | issuer            | DID text form                 |
//! | 3 | subject           | DID text form                 |
//! | 4 | vaccine_product   | UTF-8                         |
//! | 5 | dose_number       | u64 big-endian                |
//! | 6 | total_doses       | u64 big-endian                |
//! | 7 | batch_id          | UTF-8                         |
//! | 8 | issuance_date     | u64 big-endian, UTC seconds   |
//! | 9 | expiration_date   | u64 big-endian, UTC seconds   |
//!
//! Proof encoding: tag `vaxledger/proof/v1`, scheme_id, verification_method
//! (DID text form), signature bytes.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::encoding::{Digest, Encoder, DIGEST_LEN};

/// Signature scheme named in every proof this crate produces.
pub const SIGNATURE_SCHEME: &str = "Ed25519Signature2020";

/// Context URI of the credential schema.
pub const DEFAULT_CONTEXT: &str = "https://www.w3.org/2018/credentials/v1";

/// One year of validity, in seconds (365 days).
pub const ONE_YEAR_SECONDS: u64 = 31_536_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CredentialError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid credential: {0}")]
    InvalidCredential(String),
    #[error("credential carries no proof")]
    MissingProof,
    #[error("malformed DID `{0}`")]
    MalformedDid(String),
    #[error("certificate hash must be {DIGEST_LEN} bytes, got {0}")]
    BadHashLength(usize),
}

fn is_uri_safe(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_' | '~')
}

/// `did:<method>:<identifier>`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Did {
    method: String,
    identifier: String,
}

impl Did {
    pub fn new(method: &str, identifier: &str) -> Result<Self, CredentialError> {
        let text = || format!("did:{method}:{identifier}");
        if method.is_empty()
            || !method
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        {
            return Err(CredentialError::MalformedDid(text()));
        }
        if identifier.is_empty() || !identifier.chars().all(is_uri_safe) {
            return Err(CredentialError::MalformedDid(text()));
        }
        Ok(Did {
            method: method.to_owned(),
            identifier: identifier.to_owned(),
        })
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn identifier(&self) -> &str {
        &self.identifier
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did:{}:{}", self.method, self.identifier)
    }
}

impl FromStr for Did {
    type Err = CredentialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CredentialError::MalformedDid(s.to_owned());
        let rest = s.strip_prefix("did:").ok_or_else(bad)?;
        let (method, identifier) = rest.split_once(':').ok_or_else(bad)?;
        Did::new(method, identifier)
    }
}

impl Serialize for Did {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Did {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Deterministic identifier: the first 16 bytes of SHA-256(method ∥ seed), hex encoded.
pub fn generate_did(method: &str, seed: &[u8]) -> Result<Did, CredentialError> {
    if method.is_empty() {
        return Err(CredentialError::InvalidArgument("empty DID method".into()));
    }
    if seed.is_empty() {
        return Err(CredentialError::InvalidArgument("empty DID seed".into()));
    }
    let mut enc = Encoder::tagged("vaxledger/did/v1");
    enc.put_str(method).put_bytes(seed);
    let digest = enc.digest();
    Did::new(method, &hex::encode(&digest.as_bytes()[..16]))
}

/// Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(VerifyingKey);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CredentialError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CredentialError::InvalidArgument("public key must be 32 bytes".into()))?;
        VerifyingKey::from_bytes(&arr)
            .map(PublicKey)
            .map_err(|e| CredentialError::InvalidArgument(format!("bad public key: {e}")))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        self.0.verify(message, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.to_bytes()))
    }
}

/// Signing key bound to the DID that owns it.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    owner: Did,
}

impl KeyPair {
    /// Derives the private key as SHA-256("vaxledger/key/v1" ∥ seed).
    pub fn from_seed(owner: Did, seed: &[u8]) -> Self {
        let mut enc = Encoder::tagged("vaxledger/key/v1");
        enc.put_bytes(seed);
        let secret = enc.digest();
        KeyPair {
            signing: SigningKey::from_bytes(secret.as_bytes()),
            owner,
        }
    }

    pub fn owner(&self) -> &Did {
        &self.owner
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key())
    }

    pub fn private_key(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.signing.sign(message).to_bytes().to_vec()
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("owner", &self.owner)
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Proof {
    #[serde(rename = "type")]
    pub scheme_id: String,
    pub verification_method: Did,
    #[serde(rename = "signatureValue", with = "hex_bytes")]
    pub signature: Vec<u8>,
}

impl Proof {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::tagged("vaxledger/proof/v1");
        enc.put_str(&self.scheme_id)
            .put_str(&self.verification_method.to_string())
            .put_bytes(&self.signature);
        enc.finish()
    }
}

/// Vaccine metadata carried by a credential.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VaccineInfo {
    pub product: String,
    pub dose_number: u32,
    pub total_doses: u32,
    pub batch_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VaccinationCredential {
    #[serde(rename = "@context")]
    pub context: String,
    pub issuer: Did,
    pub subject: Did,
    pub vaccine_product: String,
    pub dose_number: u32,
    pub total_doses: u32,
    pub batch_id: String,
    pub issuance_date: u64,
    pub expiration_date: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proof: Option<Proof>,
}

impl VaccinationCredential {
    /// Checks the structural invariants (dose bounds, dates, non-empty metadata).
    pub fn validate(&self) -> Result<(), CredentialError> {
        let bad = |m: &str| Err(CredentialError::InvalidCredential(m.to_owned()));
        if self.context.is_empty() || !self.context.contains(':') {
            return bad("context must be a non-empty URI");
        }
        if self.vaccine_product.is_empty() || self.batch_id.is_empty() {
            return bad("vaccine metadata must be non-empty");
        }
        if self.dose_number == 0 || self.total_doses == 0 {
            return bad("dose counts must be positive");
        }
        if self.dose_number > self.total_doses {
            return bad("dose_number exceeds total_doses");
        }
        if self.expiration_date <= self.issuance_date {
            return bad("expiration_date must follow issuance_date");
        }
        Ok(())
    }

    pub fn vaccine(&self) -> VaccineInfo {
        VaccineInfo {
            product: self.vaccine_product.clone(),
            dose_number: self.dose_number,
            total_doses: self.total_doses,
            batch_id: self.batch_id.clone(),
        }
    }
}

/// Canonical byte form of the credential body; the proof is excluded.
pub fn canonicalize(c: &VaccinationCredential) -> Vec<u8> {
    let mut enc = Encoder::tagged("vaxledger/credential/v1");
    enc.put_str(&c.context)
        .put_str(&c.issuer.to_string())
        .put_str(&c.subject.to_string())
        .put_str(&c.vaccine_product)
        .put_u64(c.dose_number.into())
        .put_u64(c.total_doses.into())
        .put_str(&c.batch_id)
        .put_u64(c.issuance_date)
        .put_u64(c.expiration_date);
    enc.finish()
}

/// On-chain anchor of a signed credential.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CertificateHash(Digest);

impl CertificateHash {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CredentialError> {
        Digest::from_slice(bytes)
            .map(CertificateHash)
            .ok_or(CredentialError::BadHashLength(bytes.len()))
    }

    pub fn from_hex(s: &str) -> Result<Self, CredentialError> {
        let bytes = hex::decode(s).map_err(|e| CredentialError::InvalidArgument(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn digest(&self) -> Digest {
        self.0
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        self.0.as_bytes()
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl From<Digest> for CertificateHash {
    fn from(d: Digest) -> Self {
        CertificateHash(d)
    }
}

impl fmt::Display for CertificateHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for CertificateHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CertificateHash({})", self.to_hex())
    }
}

pub fn hash_credential(c: &VaccinationCredential) -> Result<CertificateHash, CredentialError> {
    let proof = c.proof.as_ref().ok_or(CredentialError::MissingProof)?;
    let mut bytes = canonicalize(c);
    bytes.extend_from_slice(&proof.encode());
    Ok(CertificateHash(Digest::of(&bytes)))
}

pub fn issue_credential(
    issuer_key: &KeyPair,
    issuer: &Did,
    subject: &Did,
    vaccine: &VaccineInfo,
    issuance: u64,
    validity_seconds: u64,
) -> Result<VaccinationCredential, CredentialError> {
    if validity_seconds == 0 {
        return Err(CredentialError::InvalidArgument(
            "validity must be positive".into(),
        ));
    }
    let expiration_date = issuance.checked_add(validity_seconds).ok_or_else(|| {
        CredentialError::InvalidArgument("expiration overflows the timestamp range".into())
    })?;
    let mut credential = VaccinationCredential {
        context: DEFAULT_CONTEXT.to_owned(),
        issuer: issuer.clone(),
        subject: subject.clone(),
        vaccine_product: vaccine.product.clone(),
        dose_number: vaccine.dose_number,
        total_doses: vaccine.total_doses,
        batch_id: vaccine.batch_id.clone(),
        issuance_date: issuance,
        expiration_date,
        proof: None,
    };
    credential.validate()?;
    sign_credential(&mut credential, issuer_key);
    Ok(credential)
}

/// Replaces the proof with a fresh signature over the canonical body.
pub fn sign_credential(credential: &mut VaccinationCredential, key: &KeyPair) {
    let signature = key.sign(&canonicalize(credential));
    credential.proof = Some(Proof {
        scheme_id: SIGNATURE_SCHEME.to_owned(),
        verification_method: key.owner().clone(),
        signature,
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    UnknownIssuer,
    MissingProof,
    BadSignature,
    Expired,
    IncompleteDoses,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::UnknownIssuer => "unknown-issuer",
            RejectReason::MissingProof => "missing-proof",
            RejectReason::BadSignature => "signature",
            RejectReason::Expired => "expired",
            RejectReason::IncompleteDoses => "incomplete-doses",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerificationOutcome {
    Accepted,
    Rejected(RejectReason),
}

/// Checks, in order: issuer known, signature, expiration (exclusive), full vaccination.
pub fn verify_credential(
    credential: &VaccinationCredential,
    issuer_keys: &HashMap<Did, PublicKey>,
    now: u64,
) -> VerificationOutcome {
    use VerificationOutcome::Rejected;

    let Some(key) = issuer_keys.get(&credential.issuer) else {
        return Rejected(RejectReason::UnknownIssuer);
    };
    let Some(proof) = &credential.proof else {
        return Rejected(RejectReason::MissingProof);
    };
    if proof.scheme_id != SIGNATURE_SCHEME
        || proof.verification_method != credential.issuer
        || !key.verify(&canonicalize(credential), &proof.signature)
    {
        return Rejected(RejectReason::BadSignature);
    }
    if now >= credential.expiration_date {
        return Rejected(RejectReason::Expired);
    }
    if credential.dose_number != credential.total_doses {
        return Rejected(RejectReason::IncompleteDoses);
    }
    VerificationOutcome::Accepted
}
