//! Strict JSON experiment configuration. Unknown keys, duplicate keys and
//! constraint violations are reported with the offending key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacker::AttackTrainConfig;
use crate::datasets::Regime;
use crate::error::{Error, Result};
use crate::flsim::{LdpConfig, LocalTrainConfig};
use crate::numerics::Activation;
use crate::sizeest::SizeSearchConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Gaussian clusters generated from the master seed.
    Synthetic {
        #[serde(default = "d_classes")]
        classes: usize,
        #[serde(default = "d_dim")]
        dim: usize,
        #[serde(default = "d_pool")]
        per_class_pool: usize,
        #[serde(default = "d_sep")]
        sep: f64,
    },
    /// An IDX image/label file pair.
    Idx { images: PathBuf, labels: PathBuf },
}

fn d_classes() -> usize {
    10
}
fn d_dim() -> usize {
    32
}
fn d_pool() -> usize {
    5000
}
fn d_sep() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden layer widths between the input and the class logits.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, input: usize, classes: usize) -> (Vec<usize>, Vec<Activation>) {
        let mut dims = vec![input];
        dims.extend_from_slice(&self.hidden);
        dims.push(classes);
        let mut acts = vec![self.activation; self.hidden.len()];
        acts.push(Activation::Identity);
        (dims, acts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VictimConfig {
    pub size: usize,
    pub regime: Regime,
    pub seed: u64,
}

impl Default for VictimConfig {
    fn default() -> Self {
        Self {
            size: 2000,
            regime: Regime::Iid { delta: 0.1 },
            seed: 1,
        }
    }
}

/// The benign clients that federate alongside the victim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub clients: usize,
    pub client_size: usize,
    pub regime: Regime,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 4,
            client_size: 2000,
            regime: Regime::Iid { delta: 0.1 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Iid,
    Quantity,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub train: usize,
    pub test: usize,
    /// Regimes present in the cluster, in equal shares.
    pub regimes: Vec<RegimeKind>,
    pub delta: f64,
    pub c_f: Vec<usize>,
    pub alpha: Vec<f64>,
    pub jitter: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            train: 120,
            test: 40,
            regimes: vec![RegimeKind::Iid, RegimeKind::Quantity, RegimeKind::Dirichlet],
            delta: 0.1,
            c_f: vec![3],
            alpha: vec![1.0],
            jitter: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Balanced server-side evaluation set, per class.
    pub eval_per_class: usize,
    /// Auxiliary pool for probes and virtual clients, per class.
    pub aux_per_class: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            eval_per_class: 50,
            aux_per_class: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSweepConfig {
    pub epsilons: Vec<f64>,
}

impl Default for DpSweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![40.0, 10.0, 5.0, 2.0, 1.0],
        }
    }
}

fn d_true() -> bool {
    true
}

/// A complete experiment. Only `dataset` and `rounds` are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FLRunConfig {
    pub dataset: DatasetSource,
    pub rounds: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub victim: VictimConfig,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub local: LocalTrainConfig,
    #[serde(default)]
    pub ldp: Option<LdpConfig>,
    /// Virtual clients and size probes noise their updates like real ones.
    #[serde(default = "d_true")]
    pub mirror_ldp: bool,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub size_search: SizeSearchConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub attacker: AttackTrainConfig,
    #[serde(default)]
    pub dp_sweep: DpSweepConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn bad(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn check_regime(prefix: &str, r: &Regime, classes: usize) -> Result<()> {
    r.validate(classes).map_err(|(k, m)| bad(format!("{prefix}.{k}"), m))
}

impl FLRunConfig {
    /// Class count when it is known without loading data.
    pub fn declared_classes(&self) -> Option<usize> {
        match self.dataset {
            DatasetSource::Synthetic { classes, .. } => Some(classes),
            DatasetSource::Idx { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(bad("rounds", "must be at least 1"));
        }
        match &self.dataset {
            DatasetSource::Synthetic {
                classes,
                dim,
                per_class_pool,
                sep,
            } => {
                if *classes < 2 {
                    return Err(bad("dataset.classes", "must be at least 2"));
                }
                if *dim == 0 {
                    return Err(bad("dataset.dim", "must be positive"));
                }
                if !(*sep > 0.0 && sep.is_finite()) {
                    return Err(bad("dataset.sep", format!("must be positive, got {sep}")));
                }
                let reserved = self.split.eval_per_class + self.split.aux_per_class;
                if *per_class_pool <= reserved {
                    return Err(bad(
                        "dataset.per_class_pool",
                        format!("must exceed eval_per_class + aux_per_class = {reserved}"),
                    ));
                }
            }
            DatasetSource::Idx { images, labels } => {
                for (key, p) in [("dataset.images", images), ("dataset.labels", labels)] {
                    if !p.exists() {
                        return Err(bad(key, format!("{} does not exist", p.display())));
                    }
                }
            }
        }
        if self.model.hidden.contains(&0) {
            return Err(bad("model.hidden", "layer widths must be positive"));
        }
        if self.split.eval_per_class == 0 {
            return Err(bad("split.eval_per_class", "must be positive"));
        }
        if self.local.batch_size == 0 {
            return Err(bad("local.batch_size", "must be positive"));
        }
        if !(self.local.lr > 0.0 && self.local.lr.is_finite()) {
            return Err(bad("local.lr", format!("must be positive, got {}", self.local.lr)));
        }
        if let Some(ldp) = &self.ldp {
            ldp.validate().map_err(|(k, m)| bad(format!("ldp.{k}"), m))?;
        }
        self.size_search
            .validate()
            .map_err(|(k, m)| bad(format!("size_search.{k}"), m))?;
        self.attacker
            .validate()
            .map_err(|(k, m)| bad(format!("attacker.{k}"), m))?;
        if self.cluster.test == 0 {
            return Err(bad("cluster.test", "must be at least 1"));
        }
        if self.cluster.regimes.is_empty() {
            return Err(bad("cluster.regimes", "must name at least one regime"));
        }
        if !(0.0..1.0).contains(&self.cluster.jitter) {
            return Err(bad("cluster.jitter", "must lie in [0, 1)"));
        }
        if self.dp_sweep.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(bad("dp_sweep.epsilons", "every epsilon must be positive"));
        }
        if let Some(c) = self.declared_classes() {
            self.validate_for_classes(c)?;
        }
        Ok(())
    }

    /// Checks that depend on the class count.
    pub fn validate_for_classes(&self, classes: usize) -> Result<()> {
        if self.victim.size < classes {
            return Err(bad("victim.size", format!("must be at least the class count {classes}")));
        }
        check_regime("victim.regime", &self.victim.regime, classes)?;
        check_regime("federation.regime", &self.federation.regime, classes)?;
        if self.federation.clients > 0 && self.federation.client_size < classes {
            return Err(bad("federation.client_size", format!("must be at least {classes}")));
        }
        let cl = &self.cluster;
        if !(0.0..1.0).contains(&cl.delta) {
            return Err(bad("cluster.delta", format!("must lie in [0, 1), got {}", cl.delta)));
        }
        for (i, &c_f) in cl.c_f.iter().enumerate() {
            check_regime(&format!("cluster.c_f[{i}]"), &Regime::Quantity { c_f }, classes)?;
        }
        for (i, &alpha) in cl.alpha.iter().enumerate() {
            check_regime(&format!("cluster.alpha[{i}]"), &Regime::Dirichlet { alpha }, classes)?;
        }
        if cl.regimes.contains(&RegimeKind::Quantity) && cl.c_f.is_empty() {
            return Err(bad("cluster.c_f", "needed for quantity members"));
        }
        if cl.regimes.contains(&RegimeKind::Dirichlet) && cl.alpha.is_empty() {
            return Err(bad("cluster.alpha", "needed for dirichlet members"));
        }
        if cl.train < 2 * classes {
            return Err(bad("cluster.train", format!("must be at least 2C = {}", 2 * classes)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses a configuration from JSON text.
pub fn parse_config_str(text: &str) -> Result<FLRunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: FLRunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        bad(if path == "." { String::new() } else { path }, e.inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<FLRunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}
