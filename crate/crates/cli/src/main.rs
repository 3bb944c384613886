//! `rpn`: train, evaluate, inspect and benchmark random position noise.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or I/O
//! error, 4 numeric abort.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rpn_core::data::Split;
use rpn_core::kv::KvFile;
use rpn_core::train::RunConfig;
use rpn_core::ErrorKind;

#[derive(Parser, Debug)]
#[command(name = "rpn", version, about = "Random position noise augmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write metrics, a checkpoint and the resolved config.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the splits of its run configuration.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides applied on top of the run configuration stored in the checkpoint.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Restrict to one split.
        #[arg(long)]
        split: Option<Split>,
        /// Write the logits of the first evaluated split as a tensor dump.
        #[arg(long, value_name = "FILE")]
        dump_logits: Option<PathBuf>,
        /// Write the embedded first `--limit` examples of the first evaluated split.
        #[arg(long, value_name = "FILE")]
        dump_embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        limit: usize,
    },
    /// Apply RPN steps to an embedding dump and trace every step.
    Augment {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// JSON-lines trace, one record per step.
        #[arg(long)]
        trace: PathBuf,
    },
    /// Train one RPN model per (epsilon, steps) cell and summarize dev accuracy.
    Grid {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Time preprocessing and in-loop augmentation across dataset sizes.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated methods (rpn, freelb, aeda, eda_lite).
        #[arg(long, value_delimiter = ',', default_value = "rpn,freelb,aeda,eda_lite")]
        methods: Vec<rpn_core::Method>,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// key=value run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, for example `--set rpn.epsilon=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut kv = match &self.config {
            Some(path) => KvFile::read(path).map_err(Failure::config)?,
            None => KvFile::default(),
        };
        resolve_with(&mut kv, &self.overrides)
    }
}

fn resolve_with(kv: &mut KvFile, overrides: &[String]) -> Result<RunConfig, Failure> {
    for o in overrides {
        kv.apply_override(o).map_err(Failure::config)?;
    }
    RunConfig::from_kv(kv).map_err(Failure::config)
}

/// An error plus the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: e.into(),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = error
            .chain()
            .find_map(|c| {
                if let Some(e) = c.downcast_ref::<rpn_core::Error>() {
                    Some(match e.kind() {
                        ErrorKind::Config => 2,
                        ErrorKind::Data => 3,
                        ErrorKind::Numeric => 4,
                    })
                } else {
                    c.downcast_ref::<std::io::Error>().map(|_| 3)
                }
            })
            .unwrap_or(1);
        Self { code, error }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out } => config.resolve().and_then(|c| commands::train(&c, &out)),
        Command::Eval {
            checkpoint,
            overrides,
            split,
            dump_logits,
            dump_embeddings,
            limit,
        } => commands::eval(&commands::EvalArgs {
            checkpoint,
            overrides,
            split,
            dump_logits,
            dump_embeddings,
            limit,
        }),
        Command::Augment {
            config,
            input,
            output,
            trace,
        } => config
            .resolve()
            .and_then(|c| commands::augment(&c, &input, &output, &trace)),
        Command::Grid { config, out } => config.resolve().and_then(|c| commands::grid(&c, &out)),
        Command::Bench { config, out, methods } => config.resolve().and_then(|c| commands::bench(&c, &out, &methods)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
