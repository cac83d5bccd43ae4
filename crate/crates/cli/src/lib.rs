//! Command-line front end: `cgpo train`, `cgpo ablate <kind>`, `cgpo eval`.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid configuration,
//! 3 numeric divergence, 4 corrupt checkpoint.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod run_dir;

use std::path::PathBuf;

use cgpo::diffenv::EnvKind;
use cgpo::trainer::Algorithm;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::AblationKind;
use crate::config::{parse_override, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "cgpo", version, about = "Constrained gradient-based policy optimization")]
pub struct Cli {
    /// Worker threads for parallel rollouts and ablations (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write a run directory.
    Train(ConfigArgs),
    /// Run one of the ablation studies and write its CSV.
    Ablate {
        #[arg(value_enum)]
        kind: KindArg,
        #[command(flatten)]
        config: ConfigArgs,
        /// Policy checkpoints for the probed stages, in stage order.
        #[arg(long = "stage-checkpoint")]
        stage_checkpoints: Vec<PathBuf>,
    },
    /// Evaluate a policy checkpoint and print a JSON summary.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Estimation,
    Gradient,
    Radius,
}

impl From<KindArg> for AblationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Estimation => AblationKind::Estimation,
            KindArg::Gradient => AblationKind::Gradient,
            KindArg::Radius => AblationKind::Radius,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override any field, e.g. `--set horizon=16 --set ablation.repetitions=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "CGPO_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    /// `--set` overrides first, then the dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        if let Some(e) = &self.env {
            let kind: EnvKind = e.parse()?;
            overrides.push(("env".into(), toml::Value::String(kind.as_str().into())));
        }
        if let Some(a) = &self.algorithm {
            let alg: Algorithm = a.parse()?;
            overrides.push(("algorithm".into(), toml::Value::String(alg.as_str().into())));
        }
        if let Some(n) = self.epochs {
            overrides.push(("epochs".into(), toml_int("epochs", n as u64)?));
        }
        if let Some(s) = self.seed {
            overrides.push(("seed".into(), toml_int("seed", s)?));
        }
        if let Some(d) = &self.out_dir {
            overrides.push(("out_dir".into(), toml::Value::String(d.display().to_string())));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn toml_int(field: &str, v: u64) -> Result<toml::Value> {
    i64::try_from(v)
        .map(toml::Value::Integer)
        .map_err(|_| CliError::config(field, "exceeds the TOML integer range"))
}

fn configure_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::config("workers", "must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config("workers", e.to_string()))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_workers(cli.workers)?;
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let (dir, _) = commands::with_run_dir("train", &cfg, |d| commands::train(&cfg, d))?;
            println!("{}", dir.path.display());
        }
        Command::Ablate {
            kind,
            config,
            stage_checkpoints,
        } => {
            let cfg = config.resolve()?;
            let kind = AblationKind::from(kind);
            let name = format!("ablate {}", kind.as_str());
            let (dir, _) = commands::with_run_dir(&name, &cfg, |d| commands::ablate(kind, &cfg, &stage_checkpoints, d))?;
            println!("{}", dir.path.display());
        }
        Command::Eval {
            checkpoint,
            episodes,
            config,
        } => {
            let cfg = config.resolve()?;
            let report = commands::eval(&cfg, &checkpoint, episodes)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
