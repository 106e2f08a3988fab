use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use vaxledger_core::credential::{generate_did, ONE_YEAR_SECONDS};
use vaxledger_core::netsim::TraceRecord;
use vaxledger_core::scenario::{
    self, calibrate, export_csv, read_csv, read_targets, render_residuals, render_table, CalibrationOptions, RunOptions,
    ScenarioConfig, ScenarioError, Step,
};
use vaxledger_core::workload::LoadDerivation;
use vaxledger_core::{
    hash_credential, issue_credential, required_registration_tps, required_verification_tps, verify_credential,
    BatchConfig, Did, Digest, KeyPair, PublicKey, ServiceTimeProfile, VaccinationCredential, VaccineInfo,
    VerificationOutcome,
};

/// Writes to stdout, surfacing failures such as a closed pipe as `CliError::Io`.
macro_rules! out {
    ($($t:tt)*) => {
        write!(io::stdout(), $($t)*).map_err(|e| CliError::Io("stdout".into(), e))?
    };
}

macro_rules! outln {
    ($($t:tt)*) => {
        writeln!(io::stdout(), $($t)*).map_err(|e| CliError::Io("stdout".into(), e))?
    };
}

#[derive(Parser)]
#[command(name = "vaxledger", version, about = "Vaccination-certificate ledger simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Issue a signed credential and write it as a fixture file.
    Issue {
        /// Seed for the issuer key and DID.
        #[arg(long, default_value_t = 1)]
        issuer_seed: u64,
        #[arg(long, default_value = "holder-0001")]
        subject: String,
        #[arg(long, default_value = "Comirnaty")]
        product: String,
        #[arg(long, default_value_t = 2)]
        dose: u32,
        #[arg(long, default_value_t = 2)]
        total_doses: u32,
        #[arg(long, default_value = "EJ6795")]
        batch: String,
        /// Issuance time, Unix seconds.
        #[arg(long, default_value_t = 1_622_505_600)]
        issued: u64,
        #[arg(long, default_value_t = ONE_YEAR_SECONDS)]
        validity_seconds: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the anchor digest of a credential fixture.
    Hash { fixture: PathBuf },
    /// Run one registration end to end and print its timeline.
    Register {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a credential fixture offline and run one verification end to end.
    Verify {
        /// Credential fixture to check against its issuer key.
        #[arg(long)]
        credential: Option<PathBuf>,
        /// Verification time, Unix seconds; defaults to the issuance date.
        #[arg(long)]
        now: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run scenario sweeps and report per-level metrics.
    Simulate {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// NDJSON event trace of every level.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-level ledger snapshots of the reporting peer.
        #[arg(long)]
        ledger_dir: Option<PathBuf>,
    },
    /// Fit the service-time profile to target rows.
    Calibrate {
        #[arg(long)]
        targets: PathBuf,
        /// Write the fitted `batch` and `service_profile` tables as TOML.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        max_rounds: Option<usize>,
    },
    /// Render a report CSV as an aligned table.
    Report { csv: PathBuf },
    /// Print the required throughput for the population figures.
    Loads {
        #[arg(long, default_value_t = 447_500_000)]
        population: u64,
        #[arg(long, default_value_t = 2)]
        doses: u64,
        #[arg(long, default_value_t = 3_200_000_000)]
        passengers: u64,
        #[arg(long, default_value_t = ONE_YEAR_SECONDS)]
        horizon_seconds: u64,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String, io::Error),
    Scenario(ScenarioError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(..) => 3,
            CliError::Scenario(e) => e.exit_code() as u8,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(path, e) => write!(f, "io error: {path}: {e}"),
            CliError::Scenario(e) => write!(f, "{e}"),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Scenario(e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Credential fixture file: one credential plus the issuer's public key.
#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct CredentialFixture {
    credential: VaccinationCredential,
    issuer_public_key: String,
}

impl CredentialFixture {
    fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    fn issuer_key(&self) -> Result<PublicKey, CliError> {
        let bytes = hex::decode(&self.issuer_public_key).map_err(config_err)?;
        PublicKey::from_bytes(&bytes).map_err(config_err)
    }
}

#[derive(Serialize)]
struct FittedProfile {
    batch: BatchConfig,
    service_profile: ServiceTimeProfile,
}

#[derive(Serialize)]
struct LevelTraceRecord<'a> {
    tps: f64,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io(_, e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Scenario(ScenarioError::Calibration { residuals, .. }) = &e {
                eprint!("{}", render_residuals(residuals));
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Issue {
            issuer_seed,
            subject,
            product,
            dose,
            total_doses,
            batch,
            issued,
            validity_seconds,
            out,
        } => {
            let issuer = generate_did("vax", &issuer_seed.to_be_bytes()).map_err(config_err)?;
            let key = KeyPair::from_seed(issuer.clone(), Digest::of(&issuer_seed.to_be_bytes()).as_bytes());
            let subject = Did::new("vax", &subject).map_err(config_err)?;
            let vaccine = VaccineInfo {
                product,
                dose_number: dose,
                total_doses,
                batch_id: batch,
            };
            let credential =
                issue_credential(&key, &issuer, &subject, &vaccine, issued, validity_seconds).map_err(config_err)?;
            let fixture = CredentialFixture {
                credential,
                issuer_public_key: hex::encode(key.public_key().to_bytes()),
            };
            let mut text = serde_json::to_string_pretty(&fixture).expect("fixture serializes");
            text.push('\n');
            match out {
                Some(path) => fs::write(&path, text).map_err(io_err(&path))?,
                None => out!("{text}"),
            }
        }
        Command::Hash { fixture } => {
            let f = CredentialFixture::load(&fixture)?;
            let hash = hash_credential(&f.credential).map_err(config_err)?;
            outln!("{}", hash.to_hex());
        }
        Command::Register { config, seed } => single_flow(Step::Register, config.as_deref(), seed)?,
        Command::Verify {
            credential,
            now,
            config,
            seed,
        } => {
            if let Some(path) = credential {
                let f = CredentialFixture::load(&path)?;
                let keys = HashMap::from([(f.credential.issuer.clone(), f.issuer_key()?)]);
                let now = now.unwrap_or(f.credential.issuance_date);
                let hash = hash_credential(&f.credential).map_err(config_err)?;
                match verify_credential(&f.credential, &keys, now) {
                    VerificationOutcome::Accepted => outln!("credential {}: accepted", hash.to_hex()),
                    VerificationOutcome::Rejected(r) => outln!("credential {}: rejected ({r})", hash.to_hex()),
                }
            }
            single_flow(Step::Verify, config.as_deref(), seed)?;
        }
        Command::Simulate {
            configs,
            seed,
            trace,
            out,
            ledger_dir,
        } => simulate(&configs, seed, trace.as_deref(), out.as_deref(), ledger_dir.as_deref())?,
        Command::Calibrate {
            targets,
            out,
            seed,
            duration,
            max_rounds,
        } => {
            let file = File::open(&targets).map_err(io_err(&targets))?;
            let rows = read_targets(file)?;
            let mut opts = CalibrationOptions::default();
            if let Some(s) = seed {
                opts.seed = s;
            }
            if let Some(d) = duration {
                opts.duration_seconds = d;
            }
            if let Some(r) = max_rounds {
                opts.max_rounds = r;
            }
            let fit = calibrate(&rows, &ServiceTimeProfile::default(), &BatchConfig::default(), &opts)?;
            out!("{}", render_residuals(&fit.residuals));
            outln!(
                "mean relative error {:.3} over {} evaluations",
                fit.mean_relative_error, fit.evaluations
            );
            let fitted = FittedProfile {
                batch: fit.batch,
                service_profile: fit.profile,
            };
            let text = toml::to_string(&fitted).map_err(config_err)?;
            match out {
                Some(path) => fs::write(&path, text).map_err(io_err(&path))?,
                None => out!("{text}"),
            }
        }
        Command::Report { csv } => {
            let file = File::open(&csv).map_err(io_err(&csv))?;
            out!("{}", render_table(&read_csv(file)?));
        }
        Command::Loads {
            population,
            doses,
            passengers,
            horizon_seconds,
        } => {
            let reg = required_registration_tps(population, doses, horizon_seconds).map_err(config_err)?;
            let ver = required_verification_tps(passengers, horizon_seconds).map_err(config_err)?;
            print_load("registration", &reg)?;
            print_load("verification", &ver)?;
        }
    }
    Ok(())
}

fn print_load(label: &str, d: &LoadDerivation) -> Result<(), CliError> {
    outln!("{label:<13} {:>10.4} TPS  (displayed {})", d.as_f64(), d.display());
    Ok(())
}

fn load_config(step: Step, path: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    match path {
        None => Ok(ScenarioConfig::new(step)),
        Some(p) => {
            let cfg = ScenarioConfig::from_path(p)?;
            if cfg.step != step {
                return Err(CliError::Config(format!("{} describes a {} scenario", p.display(), cfg.step)));
            }
            Ok(cfg)
        }
    }
}

fn single_flow(step: Step, config: Option<&Path>, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = load_config(step, config)?;
    cfg.tps_levels = vec![1.0];
    cfg.duration_seconds = 1.0;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = scenario::run_scenario_with(
        &cfg,
        &RunOptions {
            trace: true,
            keep_ledgers: false,
        },
    )?;
    let level = &out.report.levels[0];
    outln!("{step} flow, seed {}", cfg.seed);
    outln!("{:>12}  {:<24}  {:<14}  {:>8}", "time", "event", "host", "bytes");
    for (_, records) in &out.traces {
        for r in records.iter().filter(|r| !is_background(&r.event)) {
            outln!(
                "{:>9.3} ms  {:<24}  {:<14}  {:>8}",
                r.time_us as f64 / 1000.0,
                r.event,
                r.host,
                r.size
            );
        }
    }
    outln!("response time {:.3} ms, errors {}", level.mean_ms, level.errors);
    Ok(())
}

fn is_background(event: &str) -> bool {
    event.ends_with("gossip") || event.ends_with("heartbeat")
}

fn simulate(
    configs: &[PathBuf],
    seed: Option<u64>,
    trace: Option<&Path>,
    out: Option<&Path>,
    ledger_dir: Option<&Path>,
) -> Result<(), CliError> {
    let mut cfgs = Vec::with_capacity(configs.len());
    for path in configs {
        let mut cfg = ScenarioConfig::from_path(path)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfgs.push(cfg);
    }
    if let Some(dir) = ledger_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut trace_out = match trace {
        Some(p) => Some((p, BufWriter::new(File::create(p).map_err(io_err(p))?))),
        None => None,
    };
    let opts = RunOptions {
        trace: trace_out.is_some(),
        keep_ledgers: ledger_dir.is_some(),
    };
    let mut report = scenario::MetricsReport::default();
    for cfg in &cfgs {
        let run = scenario::run_scenario_with(cfg, &opts)?;
        if let Some((p, w)) = trace_out.as_mut() {
            for (tps, records) in &run.traces {
                for record in records {
                    serde_json::to_writer(&mut *w, &LevelTraceRecord { tps: *tps, record })
                        .map_err(|e| CliError::Io(p.display().to_string(), e.into()))?;
                    w.write_all(b"\n").map_err(io_err(p))?;
                }
            }
        }
        if let Some(dir) = ledger_dir {
            for (tps, ledger) in &run.ledgers {
                let path = dir.join(format!("{}-{tps}.ndjson", cfg.step));
                let file = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
                ledger.export_snapshot(file).map_err(ScenarioError::from)?;
            }
        }
        report.extend(run.report);
    }
    if let Some((p, mut w)) = trace_out {
        w.flush().map_err(io_err(p))?;
    }
    match out {
        Some(path) => export_csv(&report, path)?,
        None => {
            let mut buf = Vec::new();
            scenario::write_csv(&report, &mut buf)?;
            let rows = read_csv(buf.as_slice())?;
            out!("{}", render_table(&rows));
        }
    }
    Ok(())
}
