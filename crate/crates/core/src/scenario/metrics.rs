use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Step;
use super::ScenarioError;

/// Busy time of the most loaded instance of each service, as a fraction of
/// the run. A utilization proxy, not a CPU measurement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BusyFractions {
    pub endorser: f64,
    pub committer: f64,
    pub statedb: f64,
    pub sequencer: f64,
    pub broker: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub step: Step,
    pub tps: f64,
    pub requests: usize,
    pub completed: usize,
    /// Requests that were rejected, invalidated, or still unanswered at the drain deadline.
    pub errors: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// KB per second sent plus received by the busiest peer.
    pub peer_bandwidth_kb: f64,
    /// KB per second sent plus received, summed over all ordering hosts.
    pub ordering_bandwidth_kb: f64,
    pub busy: BusyFractions,
    pub saturated: bool,
    /// Slope of in-flight requests over the second half of the arrival window.
    pub queue_growth_per_s: f64,
    /// Envelopes appended to the replicated log.
    pub accepted: usize,
    /// Valid transactions committed beyond the preload, on the reporting peer.
    pub committed: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub levels: Vec<LevelMetrics>,
}

impl MetricsReport {
    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, step: Step, tps: f64) -> Option<&LevelMetrics> {
        self.levels.iter().find(|l| l.step == step && l.tps == tps)
    }

    pub fn extend(&mut self, other: MetricsReport) {
        self.levels.extend(other.levels);
    }
}

/// Nearest-rank percentile of sorted samples; 0 when empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub const CSV_HEADER: [&str; 7] = [
    "step",
    "tps",
    "response_time_ms",
    "peer_bandwidth_kb",
    "ordering_bandwidth_kb",
    "errors",
    "saturated",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub step: Step,
    pub tps: f64,
    pub response_time_ms: f64,
    pub peer_bandwidth_kb: f64,
    pub ordering_bandwidth_kb: f64,
    pub errors: usize,
    pub saturated: bool,
}

pub fn write_csv<W: Write>(report: &MetricsReport, out: W) -> Result<(), ScenarioError> {
    if report.is_empty() {
        return Err(ScenarioError::Config("cannot export an empty report".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for l in &report.levels {
        w.write_record([
            l.step.as_str().to_owned(),
            format!("{:.1}", l.tps),
            format!("{:.1}", l.mean_ms),
            format!("{:.1}", l.peer_bandwidth_kb),
            format!("{:.1}", l.ordering_bandwidth_kb),
            l.errors.to_string(),
            l.saturated.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(report: &MetricsReport, path: &Path) -> Result<(), ScenarioError> {
    if report.is_empty() {
        return Err(ScenarioError::Config("cannot export an empty report".into()));
    }
    let mut buf = Vec::new();
    write_csv(report, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<CsvRow>, ScenarioError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(ScenarioError::Config(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Aligned plain-text table of report rows.
pub fn render_table(rows: &[CsvRow]) -> String {
    let mut cells: Vec<Vec<String>> = vec![CSV_HEADER.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        cells.push(vec![
            r.step.to_string(),
            format!("{:.1}", r.tps),
            format!("{:.1}", r.response_time_ms),
            format!("{:.1}", r.peer_bandwidth_kb),
            format!("{:.1}", r.ordering_bandwidth_kb),
            r.errors.to_string(),
            r.saturated.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..CSV_HEADER.len())
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

fn csv_err(e: csv::Error) -> ScenarioError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => ScenarioError::Io(io),
        other => ScenarioError::Config(format!("CSV: {other:?}")),
    }
}
