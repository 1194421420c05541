//! `tgn`: ingest alert streams, train and evaluate temporal graph models,
//! audit them, and benchmark inference.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 training
//! failure, 4 audit failed, 5 nondeterminism detected.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tgn_core::aggregators::AggregatorKind;
use tgn_core::config::Config;
use tgn_core::Error;

/// Output root for every command; defaults to `./tgn-out`.
pub const OUTPUT_ROOT_VAR: &str = "TGN_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "tgn", version, about = "Temporal graph network engine for alert streams")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// `key = value` configuration file (a run manifest works too).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// last, mean, attention, bigru or bita.
    #[arg(long, global = true)]
    pub aggregator: Option<String>,
    /// Extra configuration as KEY=VALUE; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Subdirectory of the output root for this run; defaults to the command name.
    #[arg(long, global = true)]
    pub run: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an alert CSV (or generate a synthetic stream) into a canonical stream file.
    Ingest(IngestArgs),
    /// Balance, split, mask and train; writes the best checkpoint.
    Train(TrainArgs),
    /// Score the test partition of a stream with a checkpoint.
    Eval(EvalArgs),
    /// Check causality or batch-order invariance.
    Audit(AuditArgs),
    /// Inference latency and throughput sweeps.
    Bench(BenchArgs),
    /// Train and evaluate several aggregators under one configuration.
    Compare(CompareArgs),
    /// Inter-arrival, cumulative and class statistics of a stream.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    /// Alert CSV with the configured column names.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate the synthetic recurring-attack stream with this seed instead.
    #[arg(long)]
    pub synthetic: Option<u64>,
    /// File name of the canonical stream inside the run directory.
    #[arg(long, default_value = "stream.tgs")]
    pub output: String,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub stream: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Transductive,
    Inductive,
    Both,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AuditKind {
    Causality,
    Order,
}

#[derive(Args)]
pub struct AuditArgs {
    #[arg(long, value_enum)]
    pub kind: AuditKind,
    #[arg(long)]
    pub stream: PathBuf,
    /// Parameters (and configuration) to audit; without it causality is
    /// audited at initialization and the order audit uses the configuration.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Largest number of test batches probed by the causality audit.
    #[arg(long, default_value_t = 20)]
    pub probes: usize,
    #[arg(long, default_value_t = 0.0)]
    pub tolerance: f64,
    /// Training runs for the order audit.
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub max_mean_variance: f64,
    #[arg(long, default_value_t = 5e-2)]
    pub max_variance: f64,
    /// Test-only: flush the current batch before predicting it.
    #[arg(long, hide = true)]
    pub inject_leak: bool,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,200,300,400,500")]
    pub batch_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2000,3000,4000,5000,6000")]
    pub graph_sizes: Vec<usize>,
    /// Edges in the stream used by the batch-size sweep.
    #[arg(long, default_value_t = 6000)]
    pub edges: usize,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub aggregators: Vec<String>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub stream: PathBuf,
}

/// A failed command with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Nondeterminism(_) => 5,
            Error::Numeric(_) | Error::Causality(_) | Error::Contract(_) | Error::Domain(_) | Error::Metric(_) => 3,
            Error::Parse { .. } | Error::Config(_) | Error::Io(_) | Error::Checkpoint(_) | Error::Dimension(_) => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::input(e.to_string())
    }
}

impl Common {
    /// Defaults, then the config file, then `--set`, then the dedicated flags.
    pub fn resolve(&self) -> Result<Config, Failure> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
            None => Config::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::input(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = &self.aggregator {
            cfg.aggregator = a.parse::<AggregatorKind>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Warns about flags that a checkpoint overrides.
    pub fn warn_ignored(&self) {
        if self.config.is_some() || self.seed.is_some() || self.aggregator.is_some() || !self.overrides.is_empty() {
            eprintln!("warning: configuration flags are ignored; the checkpoint fixes the configuration");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(c, a),
        Command::Train(a) => commands::train(c, a),
        Command::Eval(a) => commands::eval(c, a),
        Command::Audit(a) => commands::audit(c, a),
        Command::Bench(a) => commands::bench(c, a),
        Command::Compare(a) => commands::compare(c, a),
        Command::Report(a) => commands::report(c, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
