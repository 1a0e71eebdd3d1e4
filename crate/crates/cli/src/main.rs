use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use ofrl_cli::commands::{cmd_evaluate, cmd_simulate, cmd_sweep, cmd_verify, EXIT_USAGE};

/// Output-feedback safe model-based reinforcement learning simulator.
#[derive(Parser)]
#[command(name = "ofrl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Config file path; omitted ⇒ built-in two-state scenario defaults
    #[arg(long)]
    config: Option<String>,

    /// Directory for CSV artifacts
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Override a config key, e.g. --set gains.kc=50 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Seed for randomized property suites (deterministic runs ignore it)
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run the learning phase, then evaluate the learned policy with frozen weights
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Roll out a fixed-weight policy from a weights file
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Whitespace/comma-separated critic weights, one entry per basis feature
        #[arg(long)]
        weights: String,
    },
    /// Sweep one gain over a list of values, reporting final J or DS per cell
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Gain to sweep: k, alpha, beta1, kc, ka1, ka2, beta, gamma (alias v)
        #[arg(long)]
        gain: String,
        /// Comma-separated gain values
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Run a verification suite: lemma1, lemma2, filter-equivalence, safety, gamma-bounds, pe-metric
    Verify {
        suite: String,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are success paths; everything else is a usage error.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let code = match cli.command {
        Command::Simulate { common } => {
            cmd_simulate(common.config.as_deref(), &common.set, &common.out)
        }
        Command::Evaluate { common, weights } => {
            cmd_evaluate(common.config.as_deref(), &weights, &common.set, &common.out)
        }
        Command::Sweep {
            common,
            gain,
            values,
        } => cmd_sweep(
            common.config.as_deref(),
            &gain,
            &values,
            &common.set,
            &common.out,
        ),
        Command::Verify { suite, common } => cmd_verify(&suite, common.seed),
    };
    std::process::exit(code);
}
