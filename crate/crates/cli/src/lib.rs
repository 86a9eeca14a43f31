//! The `gridrl` command-line runner: built-in scenarios in, CSV tables and
//! a JSON manifest out.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure or
//! divergence, 4 I/O error.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::Value;
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod output;

use config::{Overrides, Resolved, ScenarioConfig};
use output::{OutputDir, OutputEntry};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] gridrl::Error),
    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("check failed: {0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
            CliError::Failed(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gridrl", version, about = "Grid-sampling SDE scenarios, limit diagnostics and TD(0) evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Built-in model id (two_controls, linear_control, jump_linear, td0_bench).
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    /// TOML scenario file; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, env = "GRIDRL_SEED")]
    pub seed: Option<u64>,
    /// Path count (episodes for td0, identity instances for selftest).
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Worker threads for path-level parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Grid-sampling paths, one CSV per policy and path.
    Simulate,
    /// Realized covariation of two policies under the grid, limit and exploratory dynamics.
    Covariation,
    /// Triangular-array convergence tables and pre-limit vs limit moments.
    Converge,
    /// TD(0) policy evaluation with a linear value head.
    Td0,
    /// Randomized exact-identity checks of the grid random measures.
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Covariation => "covariation",
            Command::Converge => "converge",
            Command::Td0 => "td0",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub outputs: Vec<OutputEntry>,
    pub summary: Value,
}

pub fn run(cli: &Cli) -> Result<RunOutcome, CliError> {
    match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(|| execute(cli)),
        None => execute(cli),
    }
}

fn execute(cli: &Cli) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let file = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    let flags = Overrides {
        scenario: cli.scenario.clone(),
        seed: cli.seed,
        paths: cli.paths,
        out: cli.out.clone(),
    };
    let name = cli.command.name();
    let (resolved, scenario) = Resolved::new(file, flags, name)?;
    log::info!("{name}: scenario `{}`, seed {}", resolved.scenario, resolved.seed);
    let mut out = OutputDir::create(&resolved.out)?;
    let summary = match cli.command {
        Command::Simulate => commands::simulate(&resolved, &scenario, &mut out)?,
        Command::Covariation => commands::covariation(&resolved, &scenario, &mut out)?,
        Command::Converge => commands::converge(&resolved, &scenario, &mut out)?,
        Command::Td0 => commands::td0(&resolved, &scenario, &mut out)?,
        Command::Selftest => commands::selftest(&resolved, &mut out)?,
    };
    let root = out.root().to_path_buf();
    let outputs = out.finish(name, resolved.seed, &resolved, started.elapsed().as_secs_f64())?;
    if let Some(failed) = summary.get("failed").and_then(Value::as_u64).filter(|&f| f > 0) {
        return Err(CliError::Failed(format!("{failed} identity checks did not hold")));
    }
    Ok(RunOutcome {
        out: root,
        outputs,
        summary,
    })
}
