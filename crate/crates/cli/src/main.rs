//! `lrca`: generate data, train, fit normal patterns, localize and evaluate.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod commands;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lifecycle_rca::rca::Method;
use lifecycle_rca::Error;

use crate::commands::{LocalizeArgs, DEFAULT_MODEL, DEFAULT_REPORT_DIR, DEFAULT_STORE};
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "lrca", version, about = "Full-lifecycle root cause analysis for serverless requests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArg {
    /// Dataset root (normal/train, normal/fit, faulty).
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Model file [default: <dataset>/model.lrca].
    #[arg(long)]
    model: Option<PathBuf>,
    /// Normal pattern store [default: <dataset>/normal_patterns.tsv].
    #[arg(long)]
    store: Option<PathBuf>,
    /// Comma-separated methods: faasrca, direct.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset.
    Gen {
        /// Workload spec (TOML); the built-in default when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the graph auto-encoder on normal/train.
    Train {
        #[command(flatten)]
        dataset: DatasetArg,
        /// Run configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Model file [default: <dataset>/model.lrca].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit per-node normal patterns on normal/fit.
    FitNormal {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Store file [default: <dataset>/normal_patterns.tsv].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank root-cause candidates and print them as JSON lines.
    Localize {
        /// Dataset root (its faulty split is analyzed) or a directory of traces.
        #[arg(long)]
        dataset: PathBuf,
        /// Analyze only this trace.
        #[arg(long)]
        trace: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
        /// Write JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score rankings of the labeled faulty split.
    Eval {
        #[command(flatten)]
        dataset: DatasetArg,
        #[command(flatten)]
        model: ModelArgs,
        /// Report directory [default: <dataset>/report].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

fn or_default(path: Option<PathBuf>, dataset: &Path, name: &str) -> PathBuf {
    path.unwrap_or_else(|| dataset.join(name))
}

fn run(command: Command) -> lifecycle_rca::Result<String> {
    match command {
        Command::Gen { config, seed, out } => commands::gen(config.as_deref(), seed, &out),
        Command::Train {
            dataset,
            config,
            seed,
            out,
        } => {
            let config = RunConfig::load(config.as_deref())?.resolve(seed)?;
            let out = or_default(out, &dataset.dataset, DEFAULT_MODEL);
            commands::train(&dataset.dataset, config, &out)
        }
        Command::FitNormal { dataset, model, out } => {
            let model = or_default(model, &dataset.dataset, DEFAULT_MODEL);
            let out = or_default(out, &dataset.dataset, DEFAULT_STORE);
            commands::fit_normal(&dataset.dataset, &model, &out)
        }
        Command::Localize {
            dataset,
            trace,
            model,
            out,
        } => {
            let methods = if model.methods.is_empty() {
                vec![Method::Faasrca]
            } else {
                model.methods
            };
            commands::localize_cmd(LocalizeArgs {
                dataset: &dataset,
                trace: trace.as_deref(),
                model: &or_default(model.model, &dataset, DEFAULT_MODEL),
                store: &or_default(model.store, &dataset, DEFAULT_STORE),
                methods: &methods,
                out: out.as_deref(),
            })
        }
        Command::Eval { dataset, model, out } => {
            let root = &dataset.dataset;
            let methods = if model.methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                model.methods
            };
            commands::eval_cmd(
                root,
                &or_default(model.model, root, DEFAULT_MODEL),
                &or_default(model.store, root, DEFAULT_STORE),
                &methods,
                &or_default(out, root, DEFAULT_REPORT_DIR),
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
