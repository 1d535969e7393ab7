//! The `intervene` command: one verb per workflow step.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::ledger::{read_all, verify_chain, ChainStatus, EventType, Ledger, FileStore, LedgerError};
use crate::monitor::{self, AlertRule, MonitorError};
use crate::par::{self, Execution};
use crate::policy::LogicRegistry;
use crate::replay::{self, DivergenceReport, ReplayError, Status};
use crate::twin::{self, replicate_seeds, TwinError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIVERGENCE: i32 = 1;
pub const EXIT_AUDIT: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;
pub const EXIT_STORAGE: i32 = 74;

#[derive(Debug, Parser)]
#[command(name = "intervene", version, about = "Replayable adaptive-intervention deployments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the configured candidates over the environment grid.
    TwinRun(TwinArgs),
    /// Rank prior-precision / noise-variance settings over the grid.
    TwinTune(TwinArgs),
    /// Run one simulated trial through the deployment runtime and write its ledger.
    Simulate(SimulateArgs),
    /// Replay a ledger and compare every decision and update bit for bit.
    ReplayVerify(ReplayArgs),
    /// Fidelity metrics, alerts and replay status for a ledger.
    MonitorReport(MonitorArgs),
    /// Print one ledger record, or a summary of the ledger.
    LedgerInspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TwinArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the grid.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Deployment seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub participants: Option<usize>,
    #[arg(long)]
    pub days: Option<u64>,
    /// Failure-injection overrides, e.g. `delay=0.05,loss=0.02,exception=0.01`.
    #[arg(long)]
    pub inject: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Ledger file to audit.
    #[arg(long)]
    pub ledger: PathBuf,
    /// Config whose versions form the logic registry; without it the
    /// ledger's own version records are resolved against built-in logics.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the divergence report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// TOML file with `[[rules]]` entries, replacing the configured rules.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Append fired alerts to the ledger as ALERT events.
    #[arg(long)]
    pub append_alerts: bool,
    /// Skip the replay audit section.
    #[arg(long)]
    pub no_replay: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long)]
    pub seq: Option<u64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("configuration error: {0}")]
    Usage(String),
    #[error("storage error: {0}")]
    Storage(String),
    #[error(transparent)]
    Audit(ReplayError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) => EXIT_CONFIG,
            Self::Storage(_) => EXIT_STORAGE,
            Self::Audit(_) => EXIT_AUDIT,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Storage(e.to_string())
    }
}

impl From<LedgerError> for CliError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::Storage(io) => Self::Storage(io.to_string()),
            other => Self::Audit(ReplayError::Ledger(other)),
        }
    }
}

impl From<ReplayError> for CliError {
    fn from(e: ReplayError) -> Self {
        match e {
            ReplayError::Ledger(l) => l.into(),
            other => Self::Audit(other),
        }
    }
}

impl From<TwinError> for CliError {
    fn from(e: TwinError) -> Self {
        match e {
            TwinError::Config(m) => Self::Usage(m),
            TwinError::Runtime(r) => Self::Storage(r.to_string()),
        }
    }
}

impl From<MonitorError> for CliError {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::Config(m) => Self::Usage(m),
            MonitorError::Storage(io) => Self::Storage(io.to_string()),
            MonitorError::Ledger(l) => l.into(),
            broken @ MonitorError::BrokenChain { .. } => Self::Audit(ReplayError::Structural {
                seq: match broken {
                    MonitorError::BrokenChain { seq, .. } => seq,
                    _ => unreachable!(),
                },
                reason: broken.to_string(),
            }),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

/// Writes a new output file; never overwrites.
fn write_new(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = std::fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| CliError::Storage(format!("{}: {e}", path.display())))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

fn read_ledger(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Storage(format!("{}: {e}", path.display())))
}

/// Parses argv and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match execute(&cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "intervene: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::TwinRun(a) => twin_run(a, out),
        Command::TwinTune(a) => twin_tune(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::ReplayVerify(a) => replay_verify(a, out),
        Command::MonitorReport(a) => monitor_report(a, out),
        Command::LedgerInspect(a) => ledger_inspect(a, out),
    }
}

fn twin_inputs(a: &TwinArgs) -> Result<(RunConfig, Vec<u64>), CliError> {
    let config = load_config(a.config.as_deref())?;
    let master = a.seed.unwrap_or(config.twin.master_seed);
    if config.twin.replicates == 0 {
        return Err(ConfigError::Invalid {
            field: "twin.replicates".into(),
            message: "must be positive".into(),
        }
        .into());
    }
    let seeds = replicate_seeds(master, config.twin.replicates);
    Ok((config, seeds))
}

fn twin_run(a: &TwinArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (config, seeds) = twin_inputs(a)?;
    let envs = config.environment_grid()?;
    let candidates = config.candidates()?;
    let setup = config.trial_setup()?;
    let report = par::with_jobs(a.jobs, || {
        twin::run_grid(&envs, &candidates, &seeds, &setup, Execution::Parallel)
    })?;
    write_new(&a.out, report.to_table().as_bytes())?;
    writeln!(out, "wrote {} rows to {}", report.rows.len(), a.out.display())?;
    Ok(EXIT_OK)
}

fn twin_tune(a: &TwinArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (config, seeds) = twin_inputs(a)?;
    let envs = config.environment_grid()?;
    let candidates = config.tune_candidates()?;
    let setup = config.trial_setup()?;
    let report = par::with_jobs(a.jobs, || {
        twin::tune(&candidates, &envs, &seeds, &setup, Execution::Parallel)
    })?;
    write_new(&a.out, report.to_table().as_bytes())?;
    if let Some(best) = report.ranked.first() {
        writeln!(out, "best candidate {} (score {:.6})", best.candidate, best.score)?;
    }
    Ok(EXIT_OK)
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(spec) = &a.inject {
        config.injection = config.injection.with_overrides(spec).map_err(CliError::Usage)?;
    }
    let mut env = config.environment();
    if let Some(n) = a.participants {
        env.n_participants = n;
    }
    if let Some(d) = a.days {
        env.n_days = d;
    }
    let seed = a.seed.unwrap_or(config.deployment_seed);
    let mut setup = config.trial_setup()?;
    setup.stream_id = Some(config.stream_id.clone());
    let candidate = config.deployment_candidate()?;
    if a.out.exists() {
        return Err(CliError::Storage(format!("{}: refusing to overwrite", a.out.display())));
    }
    let run = twin::run_trial(&env, &candidate, &setup, seed)?;
    write_new(&a.out, &run.ledger)?;
    let records = run.ledger.iter().filter(|&&b| b == b'\n').count();
    writeln!(out, "wrote {records} records to {}", a.out.display())?;
    Ok(EXIT_OK)
}

fn registry_for(config: Option<&Path>, bytes: &[u8]) -> Result<LogicRegistry, CliError> {
    match config {
        Some(p) => Ok(RunConfig::load(p)?.registry()?),
        None => {
            let events = read_all(bytes)?;
            Ok(replay::registry_from_ledger(&events)?)
        }
    }
}

fn audit_ledger(config: Option<&Path>, bytes: &[u8]) -> Result<DivergenceReport, CliError> {
    if !verify_chain(bytes).is_ok() {
        return Ok(replay::audit(bytes, &LogicRegistry::new())?);
    }
    let registry = registry_for(config, bytes)?;
    Ok(replay::audit(bytes, &registry)?)
}

fn replay_verify(a: &ReplayArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let bytes = read_ledger(&a.ledger)?;
    let report = audit_ledger(a.config.as_deref(), &bytes)?;
    let text = report.to_text();
    out.write_all(text.as_bytes())?;
    if let Some(path) = &a.out {
        write_new(path, text.as_bytes())?;
    }
    if report.status == Status::Diverged {
        writeln!(
            out,
            "first_bad_seq\t{}",
            report.first_divergent_seq.unwrap_or_default()
        )?;
    }
    Ok(report.exit_code())
}

fn load_rules(path: &Path) -> Result<Vec<AlertRule>, CliError> {
    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct RulesFile {
        rules: Vec<AlertRule>,
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Storage(format!("{}: {e}", path.display())))?;
    let file: RulesFile = toml::from_str(&text)
        .map_err(|e| CliError::Config(ConfigError::Parse(e.to_string())))?;
    for (i, r) in file.rules.iter().enumerate() {
        r.validate().map_err(|e| ConfigError::Invalid {
            field: format!("rules[{i}]"),
            message: e.to_string(),
        })?;
    }
    Ok(file.rules)
}

fn monitor_report(a: &MonitorArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let config = load_config(a.config.as_deref())?;
    let rules = match &a.rules {
        Some(p) => load_rules(p)?,
        None => config.rules(),
    };
    if a.out.exists() {
        return Err(CliError::Storage(format!("{}: refusing to overwrite", a.out.display())));
    }
    let bytes = read_ledger(&a.ledger)?;
    let metrics = monitor::compute_metrics(&bytes)?;
    let alerts = monitor::evaluate_alerts(&metrics, &rules)?;
    let divergence = if a.no_replay {
        None
    } else {
        Some(audit_ledger(a.config.as_deref(), &bytes)?)
    };
    let report = monitor::emit_report(&metrics, &alerts, divergence.as_ref());
    write_new(&a.out, report.as_bytes())?;
    if a.append_alerts && !alerts.is_empty() {
        let store = FileStore::open_append(&a.ledger, true)?;
        let ledger = Ledger::resume(Box::new(store))?;
        monitor::append_alerts(&ledger, &alerts)?;
    }
    writeln!(out, "{} alerts; report written to {}", alerts.len(), a.out.display())?;
    Ok(match divergence {
        Some(d) => d.exit_code(),
        None => EXIT_OK,
    })
}

fn ledger_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let bytes = read_ledger(&a.ledger)?;
    let events = read_all(&bytes)?;
    match a.seq {
        Some(seq) => {
            let e = events.get(seq as usize).ok_or_else(|| {
                CliError::Usage(format!("--seq {seq}: ledger has {} records", events.len()))
            })?;
            let value: serde_json::Value = serde_json::from_slice(&e.canonical_line())
                .map_err(|err| CliError::Storage(err.to_string()))?;
            let pretty = serde_json::to_string_pretty(&value)
                .map_err(|err| CliError::Storage(err.to_string()))?;
            writeln!(out, "{pretty}")?;
        }
        None => {
            writeln!(out, "records\t{}", events.len())?;
            for t in EventType::ALL {
                let n = events.iter().filter(|e| e.event_type() == t).count();
                writeln!(out, "{t}\t{n}")?;
            }
            match verify_chain(&bytes) {
                ChainStatus::Ok { .. } => writeln!(out, "chain\tok")?,
                ChainStatus::Broken { first_bad_seq, reason } => {
                    writeln!(out, "chain\tbroken at seq {first_bad_seq}: {reason}")?
                }
            }
        }
    }
    Ok(EXIT_OK)
}
