//! `survreduce` command-line frontend.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "survreduce",
    version,
    about = "Survival analysis by reduction to standard regression and classification",
    after_long_help = config::help_text()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set model.reduction=dt`.
    /// Applied after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Shorthand for `--set input.data=PATH`.
    #[arg(short, long, global = true)]
    input: Option<PathBuf>,
    /// Shorthand for `--set output.path=PATH`.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Shorthand for `--set input.model=PATH`.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Shorthand for `--set input.state=PATH`.
    #[arg(long, global = true)]
    state: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Write the reduction's transformed dataset and a sidecar state file.
    Transform,
    /// Draw a synthetic task.
    Simulate,
    /// Fit a model and save it.
    Fit,
    /// Predict survival quantities from a saved model.
    Predict,
    /// Score a saved model, or cross-validate the configured one.
    Evaluate,
    /// Cross-validated comparison of learner presets on several tasks.
    Benchmark,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.set.clone();
    let mut shorthand = |key: &str, path: &Option<PathBuf>| {
        if let Some(p) = path {
            let quoted = toml::Value::String(p.display().to_string()).to_string();
            overrides.push(format!("{}={}", key, quoted));
        }
    };
    shorthand("input.data", &cli.input);
    shorthand("output.path", &cli.output);
    shorthand("input.model", &cli.model);
    shorthand("input.state", &cli.state);
    let cfg = config::load(cli.config.as_deref(), &overrides)?;

    let workers = match cfg.workers {
        Some(n) => Some(n),
        None => match std::env::var("SURVREDUCE_WORKERS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                CliError::Config(format!("SURVREDUCE_WORKERS must be a positive integer, got `{}`", v))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Config("worker count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }

    match cli.command {
        Command::Transform => commands::transform_cmd(&cfg),
        Command::Simulate => commands::simulate_cmd(&cfg),
        Command::Fit => commands::fit_cmd(&cfg),
        Command::Predict => commands::predict_cmd(&cfg),
        Command::Evaluate => commands::evaluate_cmd(&cfg),
        Command::Benchmark => commands::benchmark_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("survreduce: {}", e);
            ExitCode::from(e.code())
        }
    }
}
