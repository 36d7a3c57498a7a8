//! The `tgnet` command line: preprocess, train, predict, eval and stats.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{resolve, Resolved, RunConfig, DEFAULT_SEED, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl From<tgnet::data::DataError> for CliError {
    fn from(e: tgnet::data::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<tgnet::checkpoint::CheckpointError> for CliError {
    fn from(e: tgnet::checkpoint::CheckpointError) -> Self {
        match e {
            tgnet::checkpoint::CheckpointError::AblationMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<tgnet::model::ModelError> for CliError {
    fn from(e: tgnet::model::ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<tgnet::train::TrainError> for CliError {
    fn from(e: tgnet::train::TrainError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "tgnet", version, about = "Title-guided keyphrase generation")]
pub struct Cli {
    #[command(flatten)]
    pub settings: Settings,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides for the run configuration. Every flag maps to one config key.
#[derive(Debug, Default, Args)]
pub struct Settings {
    /// File of `key=value` lines applied before the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Any setting as `key=value`; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// full | no_title | no_copy
    #[arg(long, global = true)]
    pub ablation: Option<String>,
    /// train-domain | transfer
    #[arg(long, global = true)]
    pub post_mode: Option<String>,
    #[arg(long, global = true)]
    pub beam_size: Option<usize>,
    #[arg(long, global = true)]
    pub max_depth: Option<usize>,
    #[arg(long, global = true)]
    pub length_normalize: bool,
    #[arg(long, global = true)]
    pub emb_dim: Option<usize>,
    #[arg(long, global = true)]
    pub hidden_dim: Option<usize>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub vocab_size: Option<usize>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true, visible_alias = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub clip_norm: Option<f64>,
    #[arg(long, global = true)]
    pub init_range: Option<f64>,
    #[arg(long, global = true)]
    pub max_context_len: Option<usize>,
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub eval_every: Option<usize>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
}

impl Settings {
    /// The flags that were given, as config `(key, value)` pairs in a fixed
    /// order, `--set` entries last.
    pub fn pairs(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let s = |x: &Option<String>| {
            x.as_ref()
                .map(|v| serde_json::Value::String(v.clone()).to_string())
        };
        put("seed", self.seed.map(|x| x.to_string()));
        put("ablation", s(&self.ablation));
        put("post_mode", s(&self.post_mode));
        put("beam_size", self.beam_size.map(|x| x.to_string()));
        put("max_depth", self.max_depth.map(|x| x.to_string()));
        put(
            "length_normalize",
            self.length_normalize.then(|| "true".into()),
        );
        put("emb_dim", self.emb_dim.map(|x| x.to_string()));
        put("hidden_dim", self.hidden_dim.map(|x| x.to_string()));
        put("lambda", self.lambda.map(|x| x.to_string()));
        put("vocab_size", self.vocab_size.map(|x| x.to_string()));
        put("dropout", self.dropout.map(|x| x.to_string()));
        put("batch_size", self.batch_size.map(|x| x.to_string()));
        put("learning_rate", self.learning_rate.map(|x| x.to_string()));
        put("clip_norm", self.clip_norm.map(|x| x.to_string()));
        put("init_range", self.init_range.map(|x| x.to_string()));
        put(
            "max_context_len",
            self.max_context_len.map(|x| x.to_string()),
        );
        put("max_epochs", self.max_epochs.map(|x| x.to_string()));
        put("eval_every", self.eval_every.map(|x| x.to_string()));
        put("patience", self.patience.map(|x| x.to_string()));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the vocabulary and the encoded caches of each split.
    Preprocess(commands::PreprocessArgs),
    /// Train a model on a preprocessed directory and write a checkpoint.
    Train(commands::TrainArgs),
    /// Generate ranked keyphrases for one split with beam search.
    Predict(commands::PredictArgs),
    /// Score a predictions file against a split or a raw corpus.
    Eval(commands::EvalArgs),
    /// TitleRelated statistics and title-ratio buckets of a raw corpus.
    Stats(commands::StatsArgs),
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let resolved = resolve(
        env_seed.as_deref(),
        cli.settings.config.as_deref(),
        &cli.settings.pairs()?,
    )?;
    commands::run(cli.command, resolved)
}
