//! Command-line front end: one subcommand per pipeline stage, each reading
//! a `key = value` config and writing delimiter-separated exports plus a
//! JSON run manifest into the output directory.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

pub use commands::{
    cmd_aggregate, cmd_describe, cmd_estimate, cmd_match, cmd_prepare, cmd_simulate, cmd_twfe, sha256_file,
    FileRecord, Manifest, Run, Timing,
};
pub use config::{RunConfig, ENV_PREFIX, KEYS};

#[derive(Debug, Parser)]
#[command(name = "stagdid", version, about = "Staggered difference-in-differences for transfer events")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides `workers`.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel with known effects.
    Simulate(Common),
    /// Apply sample filters and write the cohort table.
    Prepare(Common),
    /// Estimate every cohort-year cell.
    Estimate(Common),
    /// Event-time curve with bootstrap bands.
    Aggregate(Common),
    /// Dynamic two-way fixed effects comparator.
    Twfe(Common),
    /// Nearest-one propensity score matching.
    Match(Common),
    /// Death-proximity and sample-mean tables.
    Describe(Common),
    /// List every configuration key.
    Keys,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Prepare(_) => "prepare",
            Command::Estimate(_) => "estimate",
            Command::Aggregate(_) => "aggregate",
            Command::Twfe(_) => "twfe",
            Command::Match(_) => "match",
            Command::Describe(_) => "describe",
            Command::Keys => "keys",
        }
    }
}

/// Resolves the configuration of a subcommand: file, environment, flags.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_sources(&common.config).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("cannot read config {}: {source}", path.display())),
        e => e,
    })?;
    if let Some(out) = &common.out {
        cfg.set("out_dir", out.display().to_string())?;
    }
    if let Some(w) = common.workers {
        cfg.set("workers", w.to_string())?;
    }
    Ok(cfg)
}

/// Runs one parsed command and returns its manifest.
pub fn execute(command: &Command) -> Result<Option<Manifest>> {
    let common = match command {
        Command::Simulate(c)
        | Command::Prepare(c)
        | Command::Estimate(c)
        | Command::Aggregate(c)
        | Command::Twfe(c)
        | Command::Match(c)
        | Command::Describe(c) => c,
        Command::Keys => {
            for (k, doc) in KEYS {
                println!("{k:<28} {doc}");
            }
            return Ok(None);
        }
    };
    let cfg = resolve_config(common)?;
    let workers = match cfg.workers()? {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| {
        let mut run = Run::new(command.name(), &cfg, workers, common.verbose)?;
        match command {
            Command::Simulate(_) => cmd_simulate(&mut run)?,
            Command::Prepare(_) => cmd_prepare(&mut run)?,
            Command::Estimate(_) => cmd_estimate(&mut run)?,
            Command::Aggregate(_) => cmd_aggregate(&mut run)?,
            Command::Twfe(_) => cmd_twfe(&mut run)?,
            Command::Match(_) => cmd_match(&mut run)?,
            Command::Describe(_) => cmd_describe(&mut run)?,
            Command::Keys => unreachable!(),
        }
        run.finish().map(Some)
    })
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
