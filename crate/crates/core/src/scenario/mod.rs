//! End-to-end register and verify flows over the simulated network,
//! per-level metrics, CSV reporting and profile calibration.

pub mod calibrate;
pub mod config;
pub mod fixture;
pub mod metrics;
mod sim;

use std::io;

use thiserror::Error;

pub use calibrate::{calibrate, evaluate, read_targets, render_residuals, testbed_targets, CalibrationOptions, Fit, Residual, TargetRow};
pub use config::{FaultEvent, ScenarioConfig, Step, TargetNode};
pub use fixture::Fixture;
pub use metrics::{export_csv, read_csv, render_table, write_csv, BusyFractions, CsvRow, LevelMetrics, MetricsReport};

use crate::chaincode::ChaincodeError;
use crate::credential::CredentialError;
use crate::ledger::{Ledger, LedgerError};
use crate::netsim::{ServiceTimeProfile, TraceRecord};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config error: {0}")]
    Config(String),
    #[error("calibration failure: mean relative error {mean_relative_error:.3}")]
    Calibration {
        mean_relative_error: f64,
        residuals: Vec<Residual>,
    },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("ledger error: {0}")]
    Ledger(#[from] LedgerError),
    #[error("chaincode error: {0}")]
    Chaincode(#[from] ChaincodeError),
    #[error("credential error: {0}")]
    Credential(#[from] CredentialError),
}

impl ScenarioError {
    /// Process exit status: 1 config, 2 calibration, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Calibration { .. } => 2,
            ScenarioError::Io(_) | ScenarioError::Ledger(LedgerError::Io(_)) => 3,
            _ => 1,
        }
    }
}

/// Batch timeout fitted together with [`calibrated_profile`].
pub const CALIBRATED_BATCH_TIMEOUT_MS: f64 = 8.125;

/// Service-time profile fitted to the bundled testbed targets
/// (`vaxledger calibrate --targets data/testbed_targets.csv`).
pub fn calibrated_profile() -> ServiceTimeProfile {
    ServiceTimeProfile {
        rest_overhead_ms: 9.875,
        endorse_ms: 0.950_781_25,
        commit_per_tx_ms: 15.242_187_5,
        orderer_per_envelope_ms: 0.5,
        broker_per_envelope_ms: 0.5,
        query_base_ms: 0.1,
        query_per_record_us: 8.981_25,
        query_batch_interval_ms: 140.0,
        commit_batch_interval_ms: 66.25,
        request_bytes: 3000,
        ack_bytes: 500,
        query_bytes: 1200,
        response_bytes: 3000,
        envelope_bytes: 3500,
        replica_ack_bytes: 100,
        block_header_bytes: 500,
        block_tx_bytes: 3500,
        gossip_bytes: 6784,
        gossip_interval_ms: 100.0,
        heartbeat_bytes: 500,
        heartbeat_interval_ms: 100.0,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub trace: bool,
    /// Keep the reporting peer's final ledger for each level.
    pub keep_ledgers: bool,
}

#[derive(Debug, Default)]
pub struct ScenarioOutput {
    pub report: MetricsReport,
    pub traces: Vec<(f64, Vec<TraceRecord>)>,
    pub ledgers: Vec<(f64, Ledger)>,
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsReport, ScenarioError> {
    Ok(run_scenario_with(cfg, &RunOptions::default())?.report)
}

pub fn run_scenario_with(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioOutput, ScenarioError> {
    cfg.validate()?;
    let fixture = Fixture::new(cfg.seed, cfg.preloaded_records)?;
    run_with_fixture(cfg, &fixture, opts)
}

/// Runs every level of `cfg` on independent simulators sharing a prebuilt fixture.
pub fn run_with_fixture(cfg: &ScenarioConfig, fixture: &Fixture, opts: &RunOptions) -> Result<ScenarioOutput, ScenarioError> {
    if fixture.seed != cfg.seed || fixture.preloaded.len() != cfg.preloaded_records {
        return Err(ScenarioError::Config("fixture does not match the scenario seed and preload".into()));
    }
    let mut out = ScenarioOutput::default();
    for &tps in &cfg.tps_levels {
        let run = sim::run_level(cfg, fixture, tps, opts.trace, opts.keep_ledgers)?;
        out.report.levels.push(run.metrics);
        if let Some(t) = run.trace {
            out.traces.push((tps, t));
        }
        if let Some(l) = run.ledger {
            out.ledgers.push((tps, l));
        }
    }
    Ok(out)
}
