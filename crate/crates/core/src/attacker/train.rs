use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::AttackerModel;
use crate::datasets::LabelDistribution;
use crate::error::{Error, Result};
use crate::numerics::{AdamParams, AdamState, RngStream};
use crate::vclients::TemporalMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `KL(true || predicted)`.
    Kl,
    /// Mean squared error over classes.
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for AttackTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 200,
            lr: 1e-3,
            batch_size: 32,
            loss: LossKind::Kl,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl AttackTrainConfig {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.hidden == 0 {
            return Err(("hidden", "must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(("lr", format!("must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(("batch_size", "must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return Err((
                "validation_fraction",
                format!("must lie in (0, 0.5], got {}", self.validation_fraction),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Lowest validation loss so far.
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned (0 means the initialisation).
    pub best_epoch: usize,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
}

fn loss_value(q: &[f64], p: &[f64], kind: LossKind) -> f64 {
    match kind {
        LossKind::Kl => p
            .iter()
            .zip(q)
            .filter(|(&a, _)| a > 0.0)
            .map(|(&a, &b)| a * (a / b.max(f64::MIN_POSITIVE)).ln())
            .sum(),
        LossKind::Mse => q.iter().zip(p).map(|(b, a)| (b - a).powi(2)).sum::<f64>() / p.len() as f64,
    }
}

fn mean_loss(model: &AttackerModel, pairs: &[(TemporalMatrix, LabelDistribution)], ids: &[usize], kind: LossKind) -> Result<f64> {
    let mut total = 0.0;
    for &i in ids {
        let q = model.forward(&pairs[i].0)?;
        total += loss_value(q.as_slice(), pairs[i].1.as_slice(), kind);
    }
    Ok(total / ids.len() as f64)
}

/// Fits the attacker with Adam on a random train/validation split and
/// returns the parameters with the lowest validation loss.
pub fn train_attacker(
    pairs: &[(TemporalMatrix, LabelDistribution)],
    cfg: &AttackTrainConfig,
) -> Result<(AttackerModel, TrainingCurve)> {
    cfg.validate()
        .map_err(|(k, m)| Error::Validation(format!("attacker.{k} {m}")))?;
    let (first, _) = pairs
        .first()
        .ok_or_else(|| Error::Validation("no training pairs".into()))?;
    let (rounds, classes) = (first.rounds(), first.classes());
    for (i, (m, d)) in pairs.iter().enumerate() {
        if m.rounds() != rounds || m.classes() != classes || d.classes() != classes {
            return Err(Error::Shape(format!(
                "pair {i} is {}x{} with {} labels, expected {rounds}x{classes}",
                m.rounds(),
                m.classes(),
                d.classes()
            )));
        }
    }
    if pairs.len() < 2 * classes {
        return Err(Error::Validation(format!(
            "{} training pairs, at least {} needed",
            pairs.len(),
            2 * classes
        )));
    }
    let root = RngStream::root(cfg.seed);
    let mut ids: Vec<usize> = (0..pairs.len()).collect();
    ids.shuffle(&mut root.child("split", 0).rng());
    let n_val = ((pairs.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, pairs.len() - 1);
    let val_ids = ids[..n_val].to_vec();
    let mut train_ids = ids[n_val..].to_vec();

    let mut model = AttackerModel::init(classes, cfg.hidden, root.child("init", 0))?;
    let mut adam = AdamState::new(model.params());
    let hp = AdamParams::with_lr(cfg.lr);
    let mut best = model.clone();
    let mut best_val = mean_loss(&model, pairs, &val_ids, cfg.loss)?;
    let mut curve = TrainingCurve {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        train_ids: Vec::new(),
        val_ids: val_ids.clone(),
    };
    let mut grad = model.params().zeros_like();
    for epoch in 1..=cfg.epochs {
        train_ids.shuffle(&mut root.child("epoch", epoch as u64).rng());
        let mut train_loss = 0.0;
        for batch in train_ids.chunks(cfg.batch_size) {
            grad.values_mut().iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (m, d) = &pairs[i];
                train_loss += model.accumulate(m, d, cfg.loss, scale, grad.values_mut())?;
            }
            adam.step(model.params_mut(), &grad, &hp)?;
        }
        train_loss /= train_ids.len() as f64;
        let val_loss = mean_loss(&model, pairs, &val_ids, cfg.loss)?;
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            curve.best_epoch = epoch;
        }
        curve.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            best_val_loss: best_val,
        });
    }
    train_ids.sort_unstable();
    curve.train_ids = train_ids;
    Ok((best, curve))
}

/// The attacker's prediction for the victim's temporal matrix.
pub fn infer_distribution(model: &AttackerModel, victim: &TemporalMatrix) -> Result<LabelDistribution> {
    model.forward(victim)
}
