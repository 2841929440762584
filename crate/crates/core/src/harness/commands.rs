//! Entry points behind each CLI subcommand.

use std::path::{Path, PathBuf};

use super::config::{parse_config, FLRunConfig};
use super::pipeline::{run_dp_sweep, run_pipeline, Stage};
use super::report::{emit_plotdata, ExperimentReport};
use crate::error::Result;

/// Root for output directories when neither `--out` nor `output_dir` is set.
pub const OUT_ROOT_ENV: &str = "LDIA_OUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    EstimateSize,
    BuildCluster,
    TrainAttacker,
    Infer,
    Evaluate,
    SweepDp,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::EstimateSize => "estimate-size",
            Command::BuildCluster => "build-cluster",
            Command::TrainAttacker => "train-attacker",
            Command::Infer => "infer",
            Command::Evaluate => "evaluate",
            Command::SweepDp => "sweep-dp",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// `--out`, then the config's `output_dir`, then `$LDIA_OUT_ROOT/<stem>`,
/// then `runs/<stem>`.
pub fn resolve_out_dir(cfg: &FLRunConfig, config_path: &Path, overrides: &Overrides) -> PathBuf {
    if let Some(o) = &overrides.out {
        return o.clone();
    }
    if let Some(o) = &cfg.output_dir {
        return o.clone();
    }
    let stem = config_path
        .file_stem()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(stem),
        None => PathBuf::from("runs").join(stem),
    }
}

/// Loads the config, applies overrides, runs the command and returns its
/// report together with the output directory.
pub fn execute(command: Command, config_path: &Path, overrides: &Overrides) -> Result<(ExperimentReport, PathBuf)> {
    let mut cfg = parse_config(config_path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    let out = resolve_out_dir(&cfg, config_path, overrides);
    let stage = match command {
        Command::Simulate => Stage::Simulate,
        Command::EstimateSize => Stage::EstimateSize,
        Command::BuildCluster => Stage::BuildCluster,
        Command::TrainAttacker => Stage::TrainAttacker,
        Command::Infer => Stage::Infer,
        Command::Evaluate => Stage::Evaluate,
        Command::SweepDp => {
            let report = run_dp_sweep(&cfg, &out)?;
            emit_plotdata(&[("sweep".into(), &report)], &out)?;
            return Ok((report, out));
        }
        Command::Report => {
            let path = out.join("report.json");
            let report = match ExperimentReport::read(&path) {
                Ok(r) if r.config_hash == cfg.hash() && r.victim.is_some() => r,
                _ => run_pipeline(&cfg, &out, Stage::Evaluate, command.name())?,
            };
            emit_plotdata(&[("victim".into(), &report)], &out)?;
            return Ok((report, out));
        }
    };
    let report = run_pipeline(&cfg, &out, stage, command.name())?;
    if report.victim.is_some() {
        emit_plotdata(&[("victim".into(), &report)], &out)?;
    }
    Ok((report, out))
}
