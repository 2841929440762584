use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use super::{fedavg, local_train, privatize, ClientState, LdpConfig, UploadRecord};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{MlpModel, ParameterVector, RngStream};
use crate::vclients::per_class_accuracy;

/// Everything needed to replay a federation deterministically.
#[derive(Debug, Clone)]
pub struct Federation {
    pub initial: MlpModel,
    pub clients: Vec<ClientState>,
    pub rounds: usize,
    /// Applied to every client's upload when present.
    pub ldp: Option<LdpConfig>,
    /// Server-side set on which the aggregated model is scored each round.
    pub eval_set: Option<Dataset>,
}

/// Handed to observers after each aggregation. Every field is an owned copy.
#[derive(Debug, Clone)]
pub struct RoundEvent {
    pub round: usize,
    /// Global parameters the clients started this round from.
    pub broadcast: ParameterVector,
    pub aggregated: ParameterVector,
    pub uploads: Vec<UploadRecord>,
}

pub trait RoundObserver {
    fn on_round(&mut self, event: RoundEvent) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationHistory {
    /// `globals[0]` is the initial model; `globals[t]` is the aggregate after round `t`.
    pub globals: Vec<ParameterVector>,
    /// `uploads[t - 1][k]`: what client `k` sent in round `t`.
    pub uploads: Vec<Vec<UploadRecord>>,
    /// Clients' own post-training parameters (differs from uploads under LDP).
    pub retained: Vec<Vec<ParameterVector>>,
    /// Per-class accuracy of each aggregate, when an eval set is configured.
    pub global_accuracy: Vec<Vec<f64>>,
}

impl FederationHistory {
    pub fn rounds(&self) -> usize {
        self.uploads.len()
    }

    /// Parameters broadcast at the start of round `t` (1-based).
    pub fn broadcast(&self, round: usize) -> &ParameterVector {
        &self.globals[round - 1]
    }

    fn position(&self, client_id: usize) -> Result<usize> {
        self.uploads
            .first()
            .and_then(|r| r.iter().position(|u| u.client_id == client_id))
            .ok_or_else(|| Error::Validation(format!("client {client_id} never uploaded")))
    }

    /// One upload per round for the given client, in round order.
    pub fn uploads_of(&self, client_id: usize) -> Result<Vec<&UploadRecord>> {
        let k = self.position(client_id)?;
        Ok(self.uploads.iter().map(|r| &r[k]).collect())
    }

    pub fn retained_of(&self, client_id: usize) -> Result<Vec<&ParameterVector>> {
        let k = self.position(client_id)?;
        Ok(self.retained.iter().map(|r| &r[k]).collect())
    }
}

/// Runs `rounds` rounds of broadcast, local training, optional
/// privatisation and FedAvg. Observers are called in order after each
/// aggregation.
pub fn run_federation(fed: &Federation, observers: &mut [&mut dyn RoundObserver]) -> Result<FederationHistory> {
    if fed.clients.is_empty() {
        return Err(Error::Validation("a federation needs at least one client".into()));
    }
    if let Some(cfg) = &fed.ldp {
        cfg.validate()
            .map_err(|(k, m)| Error::Validation(format!("ldp.{k} {m}")))?;
    }
    let sizes: Vec<usize> = fed.clients.iter().map(|c| c.dataset.len()).collect();
    let mut global = fed.initial.clone();
    let mut history = FederationHistory {
        globals: vec![global.params().clone()],
        uploads: Vec::with_capacity(fed.rounds),
        retained: Vec::with_capacity(fed.rounds),
        global_accuracy: Vec::new(),
    };
    for round in 1..=fed.rounds {
        let results: Vec<(UploadRecord, ParameterVector)> = fed
            .clients
            .par_iter()
            .map(|c| upload_for(&global, c, round, fed.ldp.as_ref()))
            .collect::<Result<_>>()?;
        let (uploads, retained): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let aggregated = fedavg(&uploads, &sizes)?;
        let next = global.with_params(aggregated.clone())?;
        let broadcast = std::mem::replace(&mut global, next);
        if let Some(eval) = &fed.eval_set {
            history.global_accuracy.push(per_class_accuracy(&global, eval)?);
        }
        for obs in observers.iter_mut() {
            obs.on_round(RoundEvent {
                round,
                broadcast: broadcast.params().clone(),
                aggregated: aggregated.clone(),
                uploads: uploads.clone(),
            })?;
        }
        history.globals.push(aggregated);
        history.uploads.push(uploads);
        history.retained.push(retained);
    }
    Ok(history)
}

fn upload_for(
    global: &MlpModel,
    client: &ClientState,
    round: usize,
    ldp: Option<&LdpConfig>,
) -> Result<(UploadRecord, ParameterVector)> {
    let clean = local_train(global, client, round)?;
    let retained = clean.params.clone();
    let sent = match ldp {
        Some(cfg) => privatize(&clean, global.params(), cfg, ldp_stream(client.seed, round))?,
        None => clean,
    };
    Ok((sent, retained))
}

pub(crate) fn ldp_stream(seed: u64, round: usize) -> RngStream {
    RngStream::new(seed, 0).child("ldp", round as u64)
}

/// One JSON object per line: a `grad_norm` record per (round, client), and
/// a `global_accuracy` record per round when available.
pub fn write_history_jsonl(history: &FederationHistory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (t, round) in history.uploads.iter().enumerate() {
        for u in round {
            let line = json!({"round": u.round, "client": u.client_id, "grad_norm": u.grad_norm});
            writeln!(out, "{line}").expect("writing to a Vec cannot fail");
        }
        if let Some(acc) = history.global_accuracy.get(t) {
            let line = json!({"round": t + 1, "global_accuracy": acc});
            writeln!(out, "{line}").expect("writing to a Vec cannot fail");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
