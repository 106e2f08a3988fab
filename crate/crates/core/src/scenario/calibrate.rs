//! Derivative-free fit of the service-time profile to measured response times
//! and peer bandwidths.
//!
//! Bounded coordinate descent: each round tries moving every parameter up and
//! down by a fraction of its range and keeps any move that lowers the
//! objective; a round without improvement halves the fraction. The search is
//! deterministic, and every simulation inside it uses the configured seed.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::config::{ScenarioConfig, Step};
use super::fixture::Fixture;
use super::{run_with_fixture, RunOptions, ScenarioError};
use crate::netsim::ServiceTimeProfile;
use crate::ordering::BatchConfig;

/// One measured row: response time in ms, bandwidths in KB per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRow {
    pub step: Step,
    pub tps: f64,
    pub response_time_ms: f64,
    pub peer_bandwidth_kb: f64,
    pub ordering_bandwidth_kb: f64,
}

pub const TESTBED_TARGETS_CSV: &str = include_str!("../../data/testbed_targets.csv");

pub fn read_targets<R: Read>(input: R) -> Result<Vec<TargetRow>, ScenarioError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| ScenarioError::Config(format!("targets: {e}"))))
        .collect()
}

/// The bundled testbed measurements.
pub fn testbed_targets() -> Vec<TargetRow> {
    read_targets(TESTBED_TARGETS_CSV.as_bytes()).expect("bundled targets parse")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub step: Step,
    pub tps: f64,
    pub target_ms: f64,
    pub simulated_ms: f64,
    pub response_error: f64,
    pub target_peer_kb: f64,
    pub simulated_peer_kb: f64,
    pub bandwidth_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub seed: u64,
    pub duration_seconds: f64,
    pub drain_seconds: f64,
    pub preloaded_records: usize,
    pub max_rounds: usize,
    /// Initial move as a fraction of each parameter's range.
    pub initial_step: f64,
    pub min_step: f64,
    /// Fit the background gossip size to the peer bandwidth intercept.
    pub fit_bandwidth: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            seed: super::config::DEFAULT_SEED,
            duration_seconds: 30.0,
            drain_seconds: 10.0,
            preloaded_records: super::config::DEFAULT_PRELOADED_RECORDS,
            max_rounds: 40,
            initial_step: 0.125,
            min_step: 1.0 / 256.0,
            fit_bandwidth: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub profile: ServiceTimeProfile,
    pub batch: BatchConfig,
    pub residuals: Vec<Residual>,
    pub mean_relative_error: f64,
    pub max_response_error: f64,
    pub max_bandwidth_error: f64,
    pub evaluations: usize,
}

/// Tolerated worst-case errors before the objective adds a penalty.
const RESPONSE_SOFT_LIMIT: f64 = 0.20;
const BANDWIDTH_SOFT_LIMIT: f64 = 0.30;
/// A fit is rejected above this mean relative error.
pub const MAX_MEAN_RELATIVE_ERROR: f64 = 0.25;

#[derive(Clone, Copy)]
struct Param {
    name: &'static str,
    lo: f64,
    hi: f64,
    integer: bool,
}

const PARAMS: [Param; 8] = [
    Param { name: "rest_overhead_ms", lo: 0.0, hi: 30.0, integer: false },
    Param { name: "endorse_ms", lo: 0.1, hi: 10.0, integer: false },
    Param { name: "commit_per_tx_ms", lo: 1.0, hi: 30.0, integer: false },
    Param { name: "commit_batch_interval_ms", lo: 10.0, hi: 200.0, integer: false },
    Param { name: "batch_timeout_ms", lo: 1.0, hi: 50.0, integer: false },
    Param { name: "query_batch_interval_ms", lo: 20.0, hi: 250.0, integer: false },
    // With the default 1000 preloaded records and a 0.1 ms base this bounds the
    // state-database capacity to roughly 105..115 queries per second.
    Param { name: "query_per_record_us", lo: 8.6, hi: 9.4, integer: false },
    Param { name: "gossip_bytes", lo: 1000.0, hi: 12000.0, integer: true },
];

fn get(p: &ServiceTimeProfile, b: &BatchConfig, name: &str) -> f64 {
    match name {
        "rest_overhead_ms" => p.rest_overhead_ms,
        "endorse_ms" => p.endorse_ms,
        "commit_per_tx_ms" => p.commit_per_tx_ms,
        "commit_batch_interval_ms" => p.commit_batch_interval_ms,
        "batch_timeout_ms" => b.batch_timeout_ms,
        "query_batch_interval_ms" => p.query_batch_interval_ms,
        "query_per_record_us" => p.query_per_record_us,
        "gossip_bytes" => p.gossip_bytes as f64,
        _ => unreachable!("unknown parameter {name}"),
    }
}

fn set(p: &mut ServiceTimeProfile, b: &mut BatchConfig, name: &str, v: f64) {
    match name {
        "rest_overhead_ms" => p.rest_overhead_ms = v,
        "endorse_ms" => p.endorse_ms = v,
        "commit_per_tx_ms" => p.commit_per_tx_ms = v,
        "commit_batch_interval_ms" => p.commit_batch_interval_ms = v,
        "batch_timeout_ms" => b.batch_timeout_ms = v,
        "query_batch_interval_ms" => p.query_batch_interval_ms = v,
        "query_per_record_us" => p.query_per_record_us = v,
        "gossip_bytes" => p.gossip_bytes = v.round() as u64,
        _ => unreachable!("unknown parameter {name}"),
    }
}

/// Simulates every target row with the given profile.
pub fn evaluate(
    targets: &[TargetRow],
    profile: &ServiceTimeProfile,
    batch: &BatchConfig,
    opts: &CalibrationOptions,
    fixture: &Fixture,
) -> Result<Vec<Residual>, ScenarioError> {
    let mut out = Vec::with_capacity(targets.len());
    for step in [Step::Register, Step::Verify] {
        let rows: Vec<&TargetRow> = targets.iter().filter(|t| t.step == step).collect();
        if rows.is_empty() {
            continue;
        }
        let mut cfg = ScenarioConfig::new(step);
        cfg.seed = opts.seed;
        cfg.duration_seconds = opts.duration_seconds;
        cfg.drain_seconds = opts.drain_seconds;
        cfg.preloaded_records = opts.preloaded_records;
        cfg.service_profile = profile.clone();
        cfg.batch = *batch;
        cfg.tps_levels = rows.iter().map(|r| r.tps).collect();
        cfg.validate()?;
        let report = run_with_fixture(&cfg, fixture, &RunOptions::default())?.report;
        for (row, level) in rows.iter().zip(&report.levels) {
            out.push(Residual {
                step,
                tps: row.tps,
                target_ms: row.response_time_ms,
                simulated_ms: level.mean_ms,
                response_error: rel(level.mean_ms, row.response_time_ms),
                target_peer_kb: row.peer_bandwidth_kb,
                simulated_peer_kb: level.peer_bandwidth_kb,
                bandwidth_error: rel(level.peer_bandwidth_kb, row.peer_bandwidth_kb),
            });
        }
    }
    Ok(out)
}

fn rel(sim: f64, target: f64) -> f64 {
    (sim - target).abs() / target
}

pub fn mean_relative_error(res: &[Residual]) -> f64 {
    if res.is_empty() {
        return f64::INFINITY;
    }
    res.iter().map(|r| r.response_error + r.bandwidth_error).sum::<f64>() / (2 * res.len()) as f64
}

fn objective(res: &[Residual]) -> f64 {
    let worst_rt = res.iter().map(|r| r.response_error).fold(0.0, f64::max);
    let worst_bw = res.iter().map(|r| r.bandwidth_error).fold(0.0, f64::max);
    mean_relative_error(res)
        + (worst_rt - RESPONSE_SOFT_LIMIT).max(0.0)
        + (worst_bw - BANDWIDTH_SOFT_LIMIT).max(0.0)
}

fn check_targets(targets: &[TargetRow]) -> Result<(), ScenarioError> {
    let fail = || ScenarioError::Calibration {
        mean_relative_error: f64::INFINITY,
        residuals: Vec::new(),
    };
    if targets.is_empty() {
        return Err(fail());
    }
    let has = |s: Step, t: f64| targets.iter().any(|r| r.step == s && r.tps == t);
    if !(has(Step::Register, 1.0) && has(Step::Register, 28.0) && has(Step::Verify, 1.0) && has(Step::Verify, 100.0)) {
        return Err(fail());
    }
    if targets
        .iter()
        .any(|r| !(r.tps > 0.0 && r.response_time_ms > 0.0 && r.peer_bandwidth_kb > 0.0))
    {
        return Err(ScenarioError::Config("target values must be positive".into()));
    }
    Ok(())
}

pub fn calibrate(
    targets: &[TargetRow],
    initial: &ServiceTimeProfile,
    initial_batch: &BatchConfig,
    opts: &CalibrationOptions,
) -> Result<Fit, ScenarioError> {
    check_targets(targets)?;
    let fixture = Fixture::new(opts.seed, opts.preloaded_records)?;
    let params: Vec<Param> = PARAMS
        .iter()
        .copied()
        .filter(|p| opts.fit_bandwidth || p.name != "gossip_bytes")
        .collect();

    let mut profile = initial.clone();
    let mut batch = *initial_batch;
    for p in &params {
        let v = get(&profile, &batch, p.name).clamp(p.lo, p.hi);
        set(&mut profile, &mut batch, p.name, v);
    }
    let mut best = evaluate(targets, &profile, &batch, opts, &fixture)?;
    let mut best_obj = objective(&best);
    let mut evaluations = 1;
    let mut step = opts.initial_step;

    for _ in 0..opts.max_rounds {
        if step < opts.min_step {
            break;
        }
        let mut improved = false;
        for p in &params {
            let x = get(&profile, &batch, p.name);
            let delta = step * (p.hi - p.lo);
            for cand in [x + delta, x - delta] {
                let mut c = cand.clamp(p.lo, p.hi);
                if p.integer {
                    c = c.round();
                }
                if c == x {
                    continue;
                }
                let (mut tp, mut tb) = (profile.clone(), batch);
                set(&mut tp, &mut tb, p.name, c);
                let res = evaluate(targets, &tp, &tb, opts, &fixture)?;
                evaluations += 1;
                let obj = objective(&res);
                if obj < best_obj {
                    best_obj = obj;
                    best = res;
                    profile = tp;
                    batch = tb;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }

    let mean = mean_relative_error(&best);
    if mean > MAX_MEAN_RELATIVE_ERROR {
        return Err(ScenarioError::Calibration {
            mean_relative_error: mean,
            residuals: best,
        });
    }
    Ok(Fit {
        max_response_error: best.iter().map(|r| r.response_error).fold(0.0, f64::max),
        max_bandwidth_error: best.iter().map(|r| r.bandwidth_error).fold(0.0, f64::max),
        profile,
        batch,
        residuals: best,
        mean_relative_error: mean,
        evaluations,
    })
}

/// Fixed-width residual table.
pub fn render_residuals(res: &[Residual]) -> String {
    let mut s = format!(
        "{:<9}{:>7}{:>11}{:>11}{:>8}{:>11}{:>11}{:>8}\n",
        "step", "tps", "target_ms", "sim_ms", "err", "target_kb", "sim_kb", "err"
    );
    for r in res {
        s.push_str(&format!(
            "{:<9}{:>7.1}{:>11.1}{:>11.1}{:>7.1}%{:>11.1}{:>11.1}{:>7.1}%\n",
            r.step.as_str(),
            r.tps,
            r.target_ms,
            r.simulated_ms,
            100.0 * r.response_error,
            r.target_peer_kb,
            r.simulated_peer_kb,
            100.0 * r.bandwidth_error
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_targets_have_the_table_shape() {
        let t = testbed_targets();
        let reg: Vec<f64> = t.iter().filter(|r| r.step == Step::Register).map(|r| r.tps).collect();
        let ver: Vec<f64> = t.iter().filter(|r| r.step == Step::Verify).map(|r| r.tps).collect();
        assert_eq!(reg, super::super::config::DEFAULT_REGISTER_LEVELS.to_vec());
        assert_eq!(ver, super::super::config::DEFAULT_VERIFY_LEVELS.to_vec());
        check_targets(&t).unwrap();
    }

    #[test]
    fn empty_or_partial_targets_fail() {
        let opts = CalibrationOptions::default();
        let p = ServiceTimeProfile::default();
        let b = BatchConfig::default();
        assert!(matches!(calibrate(&[], &p, &b, &opts), Err(ScenarioError::Calibration { .. })));
        let only_register: Vec<TargetRow> = testbed_targets().into_iter().filter(|r| r.step == Step::Register).collect();
        assert!(matches!(
            calibrate(&only_register, &p, &b, &opts),
            Err(ScenarioError::Calibration { .. })
        ));
    }

    #[test]
    fn parameter_accessors_round_trip() {
        let mut p = ServiceTimeProfile::default();
        let mut b = BatchConfig::default();
        for (i, param) in PARAMS.iter().enumerate() {
            let v = param.lo + (i as f64 + 1.0);
            set(&mut p, &mut b, param.name, v);
            assert_eq!(get(&p, &b, param.name), if param.integer { v.round() } else { v });
        }
    }
}
