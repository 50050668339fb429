//! `stopgame`: solve, verify and export perpetual optimal stopping problems and games.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure (including a failed
//! Monte Carlo verification and an exceeded budget), 3 violated model assumption.

mod commands;
mod config;
mod examples;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stopgame_core::Error;

use commands::{ExampleArgs, ExampleName, Failed, VerifyFlags};
use config::ConfigError;
use examples::Market;

#[derive(Parser)]
#[command(
    name = "stopgame",
    version,
    about = "Perpetual optimal stopping problems and stopping games for 1-d diffusions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a one-player stopping problem (config without payoff.H).
    Solve {
        config: PathBuf,
        /// Write the grid CSV here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Solve a two-player stopping game (config with payoff.G and payoff.H).
    Game {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Compare the solution with Monte Carlo estimates.
    Verify {
        config: PathBuf,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Start point; defaults to mc.x0.
        #[arg(long)]
        x0: Option<f64>,
    },
    /// Run a built-in worked example.
    Example {
        #[arg(value_enum)]
        name: ExampleName,
        /// Strike.
        #[arg(long = "K", default_value_t = 100.0)]
        strike: f64,
        /// Discount rate (also the GBM drift).
        #[arg(long, default_value_t = 0.05)]
        r: f64,
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        /// Cancellation penalty for israeli-put; defaults to half the critical penalty.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Save the generated config.
        #[arg(long)]
        config_out: Option<PathBuf>,
    },
    /// Write the grid CSV of a problem or game (stdout without --out).
    Export {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(f) = e.downcast_ref::<Failed>() {
        return f.code;
    }
    if e.downcast_ref::<ConfigError>().is_some() || e.downcast_ref::<std::io::Error>().is_some() {
        return 1;
    }
    match e.downcast_ref::<Error>() {
        Some(
            Error::InvalidInput(_)
            | Error::UnsupportedParameters(_)
            | Error::TabulationInvalid(_)
            | Error::Syntax { .. }
            | Error::UnknownIdentifier { .. }
            | Error::ArityMismatch { .. }
            | Error::OrderingViolated { .. }
            | Error::OutOfRange { .. }
            | Error::ObstacleOrderViolation { .. },
        ) => 1,
        Some(
            Error::NoFiniteValue(_)
            | Error::GrowthViolation { .. }
            | Error::AnchorBelowF { .. }
            | Error::EndsNotAnchored { .. },
        ) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Solve { config, out } => commands::solve(&config, out.as_deref()),
        Command::Game { config, out } => commands::game_cmd(&config, out.as_deref()),
        Command::Verify {
            config,
            paths,
            dt,
            seed,
            x0,
        } => commands::verify(
            &config,
            VerifyFlags {
                paths,
                dt,
                seed,
                x0,
            },
        ),
        Command::Example {
            name,
            strike,
            r,
            sigma,
            delta,
            out,
            config_out,
        } => commands::example(
            name,
            ExampleArgs {
                market: Market {
                    strike,
                    rate: r,
                    sigma,
                },
                delta,
                out,
                config_out,
            },
        ),
        Command::Export { config, out } => commands::export(&config, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Usage errors are configuration errors here; clap's own code 2 means something else.
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<Failed>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
