//! `ldia`: run the label distribution inference pipeline from a JSON config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ldia_core::harness::{execute, Command, Overrides};

#[derive(Parser)]
#[command(name = "ldia", version, about = "Label distribution inference against federated clients")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` and `LDIA_OUT_ROOT`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the federation and record the victim's uploads.
    Simulate(Common),
    /// Also estimate the victim's dataset size.
    EstimateSize(Common),
    /// Also build and run the virtual client cluster.
    BuildCluster(Common),
    /// Also train the attacker and save its checkpoint.
    TrainAttacker(Common),
    /// Predict the victim's distribution, reusing a matching checkpoint.
    Infer(Common),
    /// Full pipeline with held-out scoring.
    Evaluate(Common),
    /// Full pipeline for each privacy budget.
    SweepDp(Common),
    /// Re-emit plot data from an existing report, evaluating if needed.
    Report(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::EstimateSize(c) => (Command::EstimateSize, c),
        Cmd::BuildCluster(c) => (Command::BuildCluster, c),
        Cmd::TrainAttacker(c) => (Command::TrainAttacker, c),
        Cmd::Infer(c) => (Command::Infer, c),
        Cmd::Evaluate(c) => (Command::Evaluate, c),
        Cmd::SweepDp(c) => (Command::SweepDp, c),
        Cmd::Report(c) => (Command::Report, c),
    };
    let overrides = Overrides {
        seed: common.seed,
        out: common.out,
    };
    match execute(command, &common.config, &overrides) {
        Ok((report, out)) => {
            println!("{} finished in {:.1}s; report at {}", command.name(), report.wall_time_secs, out.join("report.json").display());
            if let Some(v) = &report.victim {
                println!(
                    "victim: L1 {:.4}  W1 {:.4}  JS {:.4}  KL {:.4}  (uniform L1 {:.4})",
                    v.distances.l1, v.distances.wasserstein, v.distances.js, v.distances.kl, v.uniform.distances.l1
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
