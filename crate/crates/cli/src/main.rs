//! Command-line front end.
//!
//! Exit status: 0 on success, 2 for usage and scenario-file errors, 1 for
//! everything else (unreadable model, infeasible geometry, I/O).
//! Log verbosity follows `VSERVO_LOG` (`error`, `warn`, `info`, `debug`,
//! `trace`; default `warn`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vservo::runner::{self, RunConfig};
use vservo::{Error, Variant};

#[derive(Parser)]
#[command(name = "vservo", version, about = "Closed-loop visual servoing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one controller variant over a batch of trials.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "coupled-ekf", value_parser = parse_variant)]
        variant: Variant,
    },
    /// Run the coupled EKF and the per-frame baseline on identical seeds.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    /// Base seed; defaults to the scenario's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Disable the entropy-based speed reduction.
    #[arg(long)]
    no_uncertainty_policy: bool,
    /// Worker threads.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    parallelism: u32,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

impl Common {
    fn into_config(self, variant: Variant) -> RunConfig {
        RunConfig {
            scenario: self.config,
            trials: self.trials,
            seed: self.seed,
            out: self.out,
            parallelism: self.parallelism as usize,
            variant,
            uncertainty_policy: !self.no_uncertainty_policy,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VSERVO_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, variant } => runner::run(&common.into_config(variant)).map(|s| vec![s]),
        Command::Compare { common } => runner::compare(&common.into_config(Variant::CoupledEkf)),
    };
    match result {
        Ok(summaries) => {
            print!("{}", runner::format_table(&summaries));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
