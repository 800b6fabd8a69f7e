//! The `nppr` command line: synthetic data, pretraining, embedding export,
//! baseline features, downstream heads and evaluation.
//!
//! Exit codes: 0 on success, 1 on runtime or validation errors, 2 on usage
//! errors.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nppr::downstream::TaskKind;
use nppr::embeddings::PoolingStrategy;

mod commands;
pub mod config;
mod manifest;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "nppr",
    version,
    about = "Self-supervised embeddings for transaction sequences"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `training.max_epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run seed; all random streams derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmbedLevel {
    Entity,
    Event,
    Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FeatureLevel {
    Entity,
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmbedFormat {
    Csv,
    Binary,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus with its labels.
    SynthGen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain an encoder on an event file.
    Pretrain {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training a checkpoint on new events.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export entity, event or category embeddings.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "entity")]
        level: EmbedLevel,
        #[arg(long, default_value = "average")]
        pooling: PoolingStrategy,
        /// Categorical feature for `--level category` (default: the first).
        #[arg(long)]
        feature: Option<String>,
        #[arg(long, default_value_t = nppr::embeddings::DEFAULT_MIN_SUPPORT)]
        min_support: usize,
        #[arg(long, value_enum, default_value = "csv")]
        format: EmbedFormat,
    },
    /// Hand-engineered aggregate features.
    Features {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "entity")]
        level: FeatureLevel,
        /// Events the frequent-value list is fitted on (default: `--events`).
        #[arg(long)]
        fit_events: Option<PathBuf>,
    },
    /// Train a downstream head on joined feature tables.
    TrainHead {
        /// Feature CSVs keyed by `id`; repeat to join several.
        #[arg(long, required = true, num_args = 1..)]
        features: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        label_column: String,
        #[arg(long, default_value = "entity_id")]
        key_column: String,
        /// Overrides `head.task`.
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against labels.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        label_column: String,
        #[arg(long, default_value = "entity_id")]
        key_column: String,
        /// Overrides `head.task`.
        #[arg(long)]
        task: Option<TaskKind>,
        /// Monetary value column; enables the VDR curve for binary tasks.
        #[arg(long)]
        value_column: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest neighbours by cosine distance in an embedding file.
    Neighbours {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, conflicts_with = "all")]
        query: Vec<String>,
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Rows with smaller support are neither queried nor returned.
        #[arg(long, default_value_t = 0)]
        min_support: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthGen { .. } => "synth-gen",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Embed { .. } => "embed",
            Command::Features { .. } => "features",
            Command::TrainHead { .. } => "train-head",
            Command::Evaluate { .. } => "evaluate",
            Command::Neighbours { .. } => "neighbours",
        }
    }
}

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let recorded: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli, &recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            1
        }
    }
}

/// The context chain of `e`, skipping causes already spelled out by the
/// message above them.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn execute(cli: Cli, recorded: &[String]) -> anyhow::Result<()> {
    let g = &cli.global;
    let cfg = RunConfig::load(g.config.as_deref(), &g.set, g.seed, g.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()?;
    let name = cli.command.name();
    log::info!("{name}: config fingerprint {}", cfg.fingerprint());
    let ctx = commands::Context {
        cfg: &cfg,
        name,
        arguments: recorded,
    };
    pool.install(|| commands::dispatch(&ctx, cli.command))
}
