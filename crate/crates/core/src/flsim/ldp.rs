use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::UploadRecord;
use crate::error::{Error, Result};
use crate::numerics::{grad_l2_norm, ParameterVector, RngStream};

/// Gaussian mechanism applied by each client to its own update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpConfig {
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
}

fn default_delta() -> f64 {
    1e-5
}

fn default_clip() -> f64 {
    1.0
}

impl LdpConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            delta: default_delta(),
            clip_norm: default_clip(),
        }
    }

    /// Returns the offending field and a message.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(("clip_norm", format!("must be positive, got {}", self.clip_norm)));
        }
        Ok(())
    }
}

/// Noise scale `clip * sqrt(2 ln(1.25 / delta)) / epsilon`.
pub fn ldp_sigma(cfg: &LdpConfig) -> f64 {
    cfg.clip_norm * (2.0 * (1.25 / cfg.delta).ln()).sqrt() / cfg.epsilon
}

/// Clips `update` to norm at most `clip_norm`, then adds i.i.d. Gaussian
/// noise of scale [`ldp_sigma`] to every coordinate.
pub fn apply_ldp(update: &ParameterVector, cfg: &LdpConfig, stream: RngStream) -> Result<ParameterVector> {
    cfg.validate()
        .map_err(|(k, m)| Error::Validation(format!("ldp.{k} {m}")))?;
    let norm = grad_l2_norm(update);
    let scale = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
    let sigma = ldp_sigma(cfg);
    let mut rng = stream.rng();
    let values = update
        .values()
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v * scale + sigma * z
        })
        .collect();
    update.with_values(values)
}

/// The record the server actually sees when the client privatises its
/// update: `params = global - noisy_update`. The input record (the
/// client's retained model) is left untouched.
pub fn privatize(
    record: &UploadRecord,
    global: &ParameterVector,
    cfg: &LdpConfig,
    stream: RngStream,
) -> Result<UploadRecord> {
    let noisy = apply_ldp(&record.grad_update, cfg, stream)?;
    let params = global.sub(&noisy)?;
    let grad_norm = grad_l2_norm(&noisy);
    Ok(UploadRecord {
        round: record.round,
        client_id: record.client_id,
        params,
        grad_update: noisy,
        grad_norm,
    })
}
