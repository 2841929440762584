//! Experiment configuration, the staged pipeline, reports and the
//! subcommand entry points.

mod baselines;
mod commands;
mod config;
mod pipeline;
mod report;

pub use baselines::{baseline_lastlayer, baseline_uniform};
pub use commands::{execute, resolve_out_dir, Command, Overrides, OUT_ROOT_ENV};
pub use config::{
    parse_config, parse_config_str, ClusterConfig, DatasetSource, DpSweepConfig, FLRunConfig, FederationConfig,
    ModelConfig, RegimeKind, SplitConfig, VictimConfig,
};
pub use pipeline::{
    build_federation, cluster_plan, cluster_size_cap, load_splits, run_dp_sweep, run_experiment, run_pipeline, template_model,
    uniform_l1, victim_accuracy, Splits, Stage, VICTIM_ID,
};
pub use report::{
    emit_plotdata, write_json, Baseline, ClusterSummary, ExperimentReport, FederationSummary, GroupSummary,
    HeldOutClient, HeldOutSummary, SizeStage, SweepPoint, TrainingSummary, VictimResult,
};
