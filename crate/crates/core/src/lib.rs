//! Simulated cross-border vaccination-certificate ledger.
//!
//! Credentials are issued and signed off-chain; only their digest is anchored
//! on a permissioned ledger replicated across 27 member-state peers. The
//! [`scenario`] module runs the register and verify flows over a deterministic
//! network simulation and reports response time and bandwidth per load level.

pub mod chaincode;
pub mod credential;
pub mod encoding;
pub mod ledger;
pub mod netsim;
pub mod ordering;
pub mod scenario;
pub mod workload;

pub use chaincode::{ChaincodeCall, ChaincodeContext, QueryMode, VerifyOutcome};
pub use credential::{
    hash_credential, issue_credential, verify_credential, CertificateHash, Did, KeyPair, PublicKey,
    VaccinationCredential, VaccineInfo, VerificationOutcome,
};
pub use encoding::Digest;
pub use ledger::{Block, Chain, Ledger, MemberStateId, Transaction, WorldState};
pub use netsim::{LinkParams, ServiceTimeProfile, SimTime};
pub use ordering::{BatchConfig, InstanceStatus, OrderingCluster, Role};
pub use workload::{generate_arrivals, required_registration_tps, required_verification_tps, ArrivalMode};
