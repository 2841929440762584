//! Serialisable results and the CSV files used for plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::FLRunConfig;
use crate::datasets::{LabelDistribution, Regime};
use crate::error::{Error, Result};
use crate::metrics::DistanceReport;
use crate::sizeest::SizeEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationSummary {
    pub rounds: usize,
    pub clients: usize,
    pub victim_size: usize,
    pub victim_truth: LabelDistribution,
    /// Norm of each uploaded victim update, by round.
    pub victim_grad_norms: Vec<f64>,
    /// Mean accuracy of the victim's own models over the last five rounds.
    pub victim_accuracy: f64,
    pub final_global_accuracy: f64,
    pub epsilon: Option<f64>,
}

/// Outcome of the size search. On failure `estimate` is absent and
/// `used_size` is the best candidate the search saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeStage {
    pub target_norm: f64,
    pub used_size: usize,
    pub estimate: Option<SizeEstimate>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub estimated_size: usize,
    /// Base size of the virtual clients: the estimate, capped by what the
    /// auxiliary pool can supply.
    pub client_size: usize,
    pub train: usize,
    pub test: usize,
    pub regimes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub distribution: LabelDistribution,
    pub distances: DistanceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimResult {
    pub truth: LabelDistribution,
    pub predicted: LabelDistribution,
    pub distances: DistanceReport,
    pub uniform: Baseline,
    pub lastlayer: Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutClient {
    pub id: usize,
    pub regime: Regime,
    pub truth: LabelDistribution,
    pub predicted: LabelDistribution,
    pub distances: DistanceReport,
    /// Distances of the uniform prediction to the same truth.
    pub uniform: DistanceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub mean: DistanceReport,
    pub uniform_mean: DistanceReport,
    /// Fraction of clients whose predicted and true argmax agree.
    pub argmax_match: f64,
    /// Mean predicted mass on classes the client actually holds.
    pub support_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutSummary {
    pub overall: GroupSummary,
    pub by_regime: BTreeMap<String, GroupSummary>,
    pub clients: Vec<HeldOutClient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub distances: DistanceReport,
    pub uniform_l1: f64,
    pub victim_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub command: String,
    pub config: FLRunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub federation: Option<FederationSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<SizeStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victim: Option<VictimResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out: Option<HeldOutSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
    /// The only field that differs between identical runs.
    pub wall_time_secs: f64,
}

impl ExperimentReport {
    pub fn new(command: &str, cfg: &FLRunConfig, classes: usize) -> Self {
        Self {
            command: command.to_string(),
            config: cfg.clone(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            classes,
            federation: None,
            size: None,
            cluster: None,
            training: None,
            victim: None,
            held_out: None,
            sweep: None,
            wall_time_secs: 0.0,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `dist_lines.csv` (one row per class for every report with a victim
/// prediction) and, when any report carries privacy results,
/// `dp_sweep.csv`. Returns the paths written.
pub fn emit_plotdata(reports: &[(String, &ExperimentReport)], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let mut lines = String::from("report,class,true,predicted,baseline_uniform,baseline_lastlayer\n");
    for (name, r) in reports {
        let Some(v) = &r.victim else { continue };
        let cols = [&v.truth, &v.predicted, &v.uniform.distribution, &v.lastlayer.distribution];
        for c in 0..v.truth.classes() {
            let _ = write!(lines, "{name},{c}");
            for d in cols {
                let _ = write!(lines, ",{}", d.as_slice()[c]);
            }
            lines.push('\n');
        }
    }
    let path = dir.join("dist_lines.csv");
    std::fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let mut points: Vec<SweepPoint> = Vec::new();
    for (_, r) in reports {
        if let Some(s) = &r.sweep {
            points.extend(s.iter().cloned());
        } else if let (Some(f), Some(v)) = (&r.federation, &r.victim) {
            if let Some(epsilon) = f.epsilon {
                points.push(SweepPoint {
                    epsilon,
                    distances: v.distances,
                    uniform_l1: v.uniform.distances.l1,
                    victim_accuracy: f.victim_accuracy,
                });
            }
        }
    }
    if !points.is_empty() {
        let mut text = String::from("epsilon,wasserstein,kl,js,l1,uniform_l1,accuracy\n");
        for p in &points {
            let d = &p.distances;
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{}",
                p.epsilon, d.wasserstein, d.kl, d.js, d.l1, p.uniform_l1, p.victim_accuracy
            );
        }
        let path = dir.join("dp_sweep.csv");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
