// SPDX-License-Identifier: MIT OR Apache-2.0

//! `cause`: data generation, two-phase training, evaluation, CCMR scoring and
//! reporting for the synthetic multimodal task.

mod artifacts;
mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use cause_core::training::AblationMode;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cause", version, about)]
struct Cli {
    /// TOML run configuration. Built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the report directory from the configuration.
    #[arg(long, global = true, env = "CAUSE_REPORT_DIR")]
    report_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the train and test splits.
    GenData,
    /// Train and freeze the black-box classifier.
    TrainClassifier,
    /// Train an explainer against the frozen classifier.
    TrainExplainer {
        #[arg(long, default_value = "cause")]
        mode: AblationMode,
    },
    /// Simulation macro-F1, BLEU-1..4 and overlap score on the test split.
    Eval {
        #[arg(long, default_value = "cause")]
        mode: AblationMode,
        /// Evaluate a freshly initialized explainer instead of a trained one.
        #[arg(long)]
        untrained: bool,
    },
    /// Counterfactual consistency score on the test split.
    Ccmr {
        #[arg(long, default_value = "cause")]
        mode: AblationMode,
    },
    /// Repetitions needed to intervene on every neuron with high probability.
    CoverageBound {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        ps: f64,
        /// Also print the number of training items `N x batch-size`.
        #[arg(long)]
        batch_size: Option<u64>,
    },
    /// Summarize evaluation and CCMR reports and draw loss curves.
    Report {
        /// Skip the SVG loss curves.
        #[arg(long)]
        no_svg: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::CoverageBound { n, delta, ps, batch_size } = cli.command {
        return commands::coverage_bound(n, delta, ps, batch_size);
    }
    let ctx = artifacts::Context::load(cli.config.as_deref(), cli.report_dir)?;
    match cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::TrainClassifier => commands::train_classifier(&ctx),
        Command::TrainExplainer { mode } => commands::train_explainer(&ctx, mode),
        Command::Eval { mode, untrained } => commands::eval(&ctx, mode, untrained),
        Command::Ccmr { mode } => commands::ccmr(&ctx, mode),
        Command::Report { no_svg } => report::report(&ctx, !no_svg),
        Command::CoverageBound { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
