//! Federated orchestration: local SGD, FedAvg, the server's view of uploads
//! and the local differential privacy defense.

mod federation;
mod ldp;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{axpy, grad_l2_norm, MlpModel, ParameterVector, RngStream};

pub use federation::{
    run_federation, write_history_jsonl, Federation, FederationHistory, RoundEvent, RoundObserver,
};
pub use ldp::{apply_ldp, ldp_sigma, privatize, LdpConfig};

/// Local optimisation settings shared by real and virtual clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalTrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self {
            local_epochs: 1,
            batch_size: 32,
            lr: 0.05,
        }
    }
}

/// A participant: its data plus how it trains. `seed` keys the minibatch
/// shuffles, so two clients with equal data and seed train identically.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub dataset: Dataset,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl ClientState {
    pub fn new(id: usize, dataset: Dataset, cfg: &LocalTrainConfig, seed: u64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Validation(format!("client {id} has an empty dataset")));
        }
        if cfg.batch_size == 0 || cfg.batch_size > dataset.len() {
            return Err(Error::Validation(format!(
                "client {id}: batch size {} must lie in [1, {}]",
                cfg.batch_size,
                dataset.len()
            )));
        }
        if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
            return Err(Error::Validation(format!("client {id}: learning rate {} is invalid", cfg.lr)));
        }
        Ok(Self {
            id,
            dataset,
            local_epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            seed,
        })
    }

    pub(crate) fn stream(&self, round: usize) -> RngStream {
        RngStream::new(self.seed, 0).child("local", round as u64)
    }
}

/// What the server receives from one client in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadRecord {
    pub round: usize,
    pub client_id: usize,
    pub params: ParameterVector,
    /// `global - params`: the accumulated update (gradient times learning rate).
    pub grad_update: ParameterVector,
    pub grad_norm: f64,
}

impl UploadRecord {
    pub(crate) fn from_params(round: usize, client_id: usize, global: &ParameterVector, params: ParameterVector) -> Result<Self> {
        let grad_update = global.sub(&params)?;
        let grad_norm = grad_l2_norm(&grad_update);
        Ok(Self {
            round,
            client_id,
            params,
            grad_update,
            grad_norm,
        })
    }
}

/// Mini-batch SGD from the global parameters for `client.local_epochs`
/// epochs, shuffling with the client's round stream.
pub fn local_train(global: &MlpModel, client: &ClientState, round: usize) -> Result<UploadRecord> {
    let data = &client.dataset;
    if data.is_empty() {
        return Err(Error::Validation(format!("client {} has an empty dataset", client.id)));
    }
    if data.dim() != global.input_dim() {
        return Err(Error::Shape(format!(
            "client {} data has {} features, model expects {}",
            client.id,
            data.dim(),
            global.input_dim()
        )));
    }
    global.check_labels(data.labels())?;
    let mut model = global.clone();
    let mut rng = client.stream(round).rng();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = client.batch_size.clamp(1, data.len());
    let mut grad = vec![0.0; global.params().len()];
    for _ in 0..client.local_epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            model.accumulate_grad(data.features(), data.labels(), rows, &mut grad);
            axpy(-client.lr, &grad, model.params_mut().values_mut());
        }
    }
    UploadRecord::from_params(round, client.id, global.params(), model.into_params())
}

/// Size-weighted mean of parameter vectors.
///
/// Computed as `p_0 + sum_k w_k (p_k - p_0)` and clamped per coordinate to
/// the inputs' range, so equal inputs aggregate to themselves exactly.
pub fn weighted_mean(params: &[&ParameterVector], sizes: &[usize]) -> Result<ParameterVector> {
    let first = *params
        .first()
        .ok_or_else(|| Error::Validation("nothing to aggregate".into()))?;
    if params.len() != sizes.len() {
        return Err(Error::Validation(format!("{} uploads but {} sizes", params.len(), sizes.len())));
    }
    for p in params {
        first.ensure_same_layout(p)?;
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Validation("total client size is zero".into()));
    }
    let mut out = first.values().to_vec();
    let base = first.values();
    for (p, &n) in params.iter().zip(sizes).skip(1) {
        let w = n as f64 / total as f64;
        for ((o, &v), &b) in out.iter_mut().zip(p.values()).zip(base) {
            *o += w * (v - b);
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        let (lo, hi) = params
            .iter()
            .map(|p| p.values()[j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        *o = o.clamp(lo, hi);
    }
    first.with_values(out)
}

/// FedAvg over uploaded parameters, weighted by client sizes `n_k / n`.
pub fn fedavg(uploads: &[UploadRecord], sizes: &[usize]) -> Result<ParameterVector> {
    let params: Vec<&ParameterVector> = uploads.iter().map(|u| &u.params).collect();
    weighted_mean(&params, sizes)
}
