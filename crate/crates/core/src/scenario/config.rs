use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::chaincode::QueryMode;
use crate::netsim::{LinkParams, ServiceTimeProfile};
use crate::ordering::{BatchConfig, InstanceStatus, Role};
use crate::workload::ArrivalMode;

pub const DEFAULT_REGISTER_LEVELS: [f64; 6] = [1.0, 2.0, 4.0, 8.0, 16.0, 28.0];
pub const DEFAULT_VERIFY_LEVELS: [f64; 8] = [1.0, 2.0, 4.0, 8.0, 16.0, 28.0, 50.0, 100.0];
pub const DEFAULT_DURATION_SECONDS: f64 = 60.0;
pub const DEFAULT_DRAIN_SECONDS: f64 = 30.0;
pub const DEFAULT_SEED: u64 = 20_210_601;
pub const DEFAULT_PRELOADED_RECORDS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Register,
    Verify,
}

impl Step {
    pub fn as_str(self) -> &'static str {
        match self {
            Step::Register => "register",
            Step::Verify => "verify",
        }
    }

    pub fn default_levels(self) -> Vec<f64> {
        match self {
            Step::Register => DEFAULT_REGISTER_LEVELS.to_vec(),
            Step::Verify => DEFAULT_VERIFY_LEVELS.to_vec(),
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Step {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "register" => Ok(Step::Register),
            "verify" => Ok(Step::Verify),
            other => Err(ScenarioError::Config(format!("unknown step {other:?}"))),
        }
    }
}

/// Which peer receives client requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetNode {
    /// Every request goes to the first member state's peer.
    #[default]
    Single,
    /// Requests rotate over all 27 peers.
    Spread,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    pub at_ms: f64,
    pub role: Role,
    pub index: usize,
    pub status: InstanceStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub step: Step,
    pub tps_levels: Vec<f64>,
    pub duration_seconds: f64,
    /// Extra simulated time after the last arrival for in-flight requests to finish.
    pub drain_seconds: f64,
    pub seed: u64,
    pub preloaded_records: usize,
    pub query_mode: QueryMode,
    pub arrival_mode: ArrivalMode,
    pub target: TargetNode,
    pub link: LinkParams,
    pub batch: BatchConfig,
    pub service_profile: ServiceTimeProfile,
    pub fault_schedule: Vec<FaultEvent>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    step: Step,
    tps_levels: Option<Vec<f64>>,
    duration_seconds: Option<f64>,
    drain_seconds: Option<f64>,
    seed: Option<u64>,
    preloaded_records: Option<usize>,
    query_mode: Option<QueryMode>,
    arrival_mode: Option<ArrivalMode>,
    target: Option<TargetNode>,
    link: Option<LinkParams>,
    batch: Option<BatchConfig>,
    service_profile: Option<ServiceTimeProfile>,
    #[serde(default)]
    fault_schedule: Vec<FaultEvent>,
}

impl ScenarioConfig {
    pub fn new(step: Step) -> Self {
        ScenarioConfig {
            step,
            tps_levels: step.default_levels(),
            duration_seconds: DEFAULT_DURATION_SECONDS,
            drain_seconds: DEFAULT_DRAIN_SECONDS,
            seed: DEFAULT_SEED,
            preloaded_records: DEFAULT_PRELOADED_RECORDS,
            query_mode: QueryMode::default(),
            arrival_mode: ArrivalMode::default(),
            target: TargetNode::default(),
            link: LinkParams::default(),
            batch: BatchConfig::default(),
            service_profile: ServiceTimeProfile::default(),
            fault_schedule: Vec::new(),
        }
    }

    /// Parses a TOML scenario. Omitted keys take the defaults of [`ScenarioConfig::new`].
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        let d = ScenarioConfig::new(f.step);
        let cfg = ScenarioConfig {
            step: f.step,
            tps_levels: f.tps_levels.unwrap_or(d.tps_levels),
            duration_seconds: f.duration_seconds.unwrap_or(d.duration_seconds),
            drain_seconds: f.drain_seconds.unwrap_or(d.drain_seconds),
            seed: f.seed.unwrap_or(d.seed),
            preloaded_records: f.preloaded_records.unwrap_or(d.preloaded_records),
            query_mode: f.query_mode.unwrap_or(d.query_mode),
            arrival_mode: f.arrival_mode.unwrap_or(d.arrival_mode),
            target: f.target.unwrap_or(d.target),
            link: f.link.unwrap_or(d.link),
            batch: f.batch.unwrap_or(d.batch),
            service_profile: f.service_profile.unwrap_or(d.service_profile),
            fault_schedule: f.fault_schedule,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        if self.tps_levels.is_empty() {
            return bad("tps_levels must not be empty".into());
        }
        if let Some(t) = self.tps_levels.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return bad(format!("tps level {t} is not positive"));
        }
        if !(self.duration_seconds > 0.0 && self.duration_seconds.is_finite()) {
            return bad("duration_seconds must be positive".into());
        }
        if !(self.drain_seconds >= 0.0 && self.drain_seconds.is_finite()) {
            return bad("drain_seconds must be >= 0".into());
        }
        self.link.validate().map_err(|e| ScenarioError::Config(e.to_string()))?;
        self.batch.validate().map_err(|e| ScenarioError::Config(e.to_string()))?;
        self.service_profile
            .validate()
            .map_err(|e| ScenarioError::Config(e.to_string()))?;
        for f in &self.fault_schedule {
            if !(f.at_ms >= 0.0 && f.at_ms.is_finite()) {
                return bad(format!("fault time {} must be >= 0", f.at_ms));
            }
            if f.index >= f.role.cardinality() {
                return bad(format!(
                    "fault index {} out of range for {} (0..{})",
                    f.index,
                    f.role,
                    f.role.cardinality()
                ));
            }
        }
        Ok(())
    }
}
