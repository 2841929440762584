//! Labelled datasets, the synthetic benchmark, IDX files, and the three
//! client partition regimes (IID band, label quantity, Dirichlet).

mod idx;
mod partition;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx};
pub use partition::{
    partition_dirichlet, partition_iid, partition_quantity, partition_with_regime, sample_auxiliary,
    sample_dirichlet, sample_uniform, ClientSample, PartitionManifest, PartitionSpec,
};
pub use synthetic::gen_synthetic;

/// Features in `[0, 1]` with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor2,
    labels: Vec<usize>,
    classes: usize,
    sample_shape: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Tensor2, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let d = features.cols();
        Self::with_shape(features, labels, classes, vec![d])
    }

    /// Like [`Dataset::new`] but records the per-sample shape (e.g. image
    /// rows and columns) so it can be written back out.
    pub fn with_shape(
        features: Tensor2,
        labels: Vec<usize>,
        classes: usize,
        sample_shape: Vec<usize>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Validation(format!("label {bad} outside [0, {classes})")));
        }
        if sample_shape.iter().product::<usize>() != features.cols() {
            return Err(Error::Shape(format!(
                "sample shape {sample_shape:?} does not match {} features",
                features.cols()
            )));
        }
        Ok(Self {
            features,
            labels,
            classes,
            sample_shape,
        })
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Row indices grouped by label, each group in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.classes];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y].push(i);
        }
        groups
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            sample_shape: self.sample_shape.clone(),
        }
    }

    /// Splits off the first `per_class` samples of every class (in index
    /// order) and returns `(taken, rest)`.
    pub fn split_per_class(&self, per_class: usize) -> Result<(Self, Self)> {
        let groups = self.indices_by_class();
        let mut taken = Vec::new();
        let mut rest = Vec::new();
        for (c, g) in groups.iter().enumerate() {
            if g.len() < per_class {
                return Err(Error::Capacity(format!(
                    "class {c} has {} samples, {per_class} requested",
                    g.len()
                )));
            }
            taken.extend_from_slice(&g[..per_class]);
            rest.extend_from_slice(&g[per_class..]);
        }
        taken.sort_unstable();
        rest.sort_unstable();
        Ok((self.subset(&taken), self.subset(&rest)))
    }

    pub fn label_distribution(&self) -> Result<LabelDistribution> {
        LabelDistribution::from_counts(&self.class_counts())
    }
}

/// Fractions over `C` classes: non-negative, summing to one within 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Validation("empty label distribution".into()));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("label distribution has a negative or non-finite entry".into()));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("label distribution sums to {s}")));
        }
        Ok(Self(p))
    }

    /// Exact empirical frequencies `count_i / total`.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Validation("no samples to form a distribution".into()));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(classes: usize, k: usize) -> Self {
        let mut p = vec![0.0; classes];
        p[k] = 1.0;
        Self(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        crate::numerics::argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for LabelDistribution {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LabelDistribution> for Vec<f64> {
    fn from(d: LabelDistribution) -> Self {
        d.0
    }
}

/// How a client's label mix is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regime {
    /// Per-label counts within `size / C * (1 ± delta)`.
    Iid { delta: f64 },
    /// Only `c_f` randomly chosen labels are present.
    Quantity { c_f: usize },
    /// Label proportions drawn from `Dir(alpha * 1_C)`.
    Dirichlet { alpha: f64 },
}

impl Regime {
    pub fn validate(&self, classes: usize) -> std::result::Result<(), (String, String)> {
        match *self {
            Regime::Iid { delta } if !(0.0..1.0).contains(&delta) => {
                Err(("delta".into(), format!("must lie in [0, 1), got {delta}")))
            }
            Regime::Quantity { c_f } if c_f < 1 || c_f > classes => {
                Err(("c_f".into(), format!("must lie in [1, {classes}], got {c_f}")))
            }
            Regime::Dirichlet { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(("alpha".into(), format!("must be positive, got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Iid { .. } => "iid",
            Regime::Quantity { .. } => "quantity",
            Regime::Dirichlet { .. } => "dirichlet",
        }
    }
}
