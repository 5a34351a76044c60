//! Command-line front end: argument parsing, config merging and exit codes.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 numerical failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::UsageError;

#[derive(Parser, Debug)]
#[command(
    name = "editfollower",
    version,
    about = "Courtesy-conditioned car-following models",
    after_help = "Settings may also come from a TOML file (--config) with one table per \
                  subcommand, keyed by flag name; flags take precedence. Log level: \
                  EDITFOLLOWER_LOG or --log-level."
)]
struct Cli {
    /// TOML config file with one table per subcommand
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap on worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// error, warn, info, debug or trace
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract car-following events from a raw trajectory CSV
    Extract(commands::ExtractOpts),
    /// Compute per-event discourtesy labels
    Label(commands::LabelOpts),
    /// Generate a synthetic labelled corpus
    Synth(commands::SynthOpts),
    /// Train a follower model
    Train(commands::TrainOpts),
    /// Roll a trained model out over events
    Simulate(commands::SimulateOpts),
    /// Spacing, speed and courtesy metrics of one or more models
    Evaluate(commands::EvaluateOpts),
    /// Time-gap and behaved-ψ response to scaled ψ inputs
    Controllability(commands::ControllabilityOpts),
}

fn init_logging(level: Option<&str>) {
    let env = env_logger::Env::new().filter_or("EDITFOLLOWER_LOG", "info");
    let mut builder = env_logger::Builder::from_env(env);
    if let Some(level) = level {
        builder.parse_filters(level);
    }
    // a second dispatch in the same process keeps the first logger
    let _ = builder.format_timestamp(None).try_init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Extract(o) => commands::extract(o, config),
        Command::Label(o) => commands::label(o, config),
        Command::Synth(o) => commands::synth(o, config),
        Command::Train(o) => commands::train_cmd(o, config),
        Command::Simulate(o) => commands::simulate(o, config),
        Command::Evaluate(o) => commands::evaluate_cmd(o, config),
        Command::Controllability(o) => commands::controllability_cmd(o, config),
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<editfollower::Error>())
        .any(editfollower::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    init_logging(cli.log_level.as_deref());
    let result = match cli.threads {
        Some(0) => Err(UsageError("--threads must be at least 1".into()).into()),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(e.into()),
        },
        None => run(cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        let usage: anyhow::Error = UsageError("bad flag".into()).into();
        assert_eq!(exit_code(&usage), 1);
        let data: anyhow::Error = editfollower::Error::Schema("missing column".into()).into();
        assert_eq!(exit_code(&data), 2);
        let diverged: anyhow::Error = editfollower::Error::Divergence {
            epoch: 3,
            batch: 1,
            reason: "non-finite loss".into(),
        }
        .into();
        assert_eq!(exit_code(&diverged.context("training")), 3);
    }

    #[test]
    fn zero_threads_is_a_usage_error() {
        assert_eq!(dispatch(["editfollower", "--threads", "0", "label", "--input", "x", "--output", "y"]), 1);
    }
}
