//! Victim dataset-size estimation: probe virtual clients of candidate sizes
//! and double or halve the size until their update norm falls within a
//! tolerance band around the victim's.
//!
//! Larger local datasets take more SGD steps per epoch, so the update norm
//! grows with size early in training; the search relies only on that trend.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{sample_uniform, Dataset};
use crate::error::{Error, Result};
use crate::flsim::{local_train, privatize, ClientState, LdpConfig, LocalTrainConfig};
use crate::numerics::{grad_l2_norm, MlpModel, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SizeSearchConfig {
    /// Half-width of the acceptance band in norm units; `None` means 5% of
    /// the target.
    pub tolerance: Option<f64>,
    pub s_init: usize,
    pub s_min: usize,
    pub s_max: usize,
    /// Number of leading broadcast models a probe trains from.
    pub probe_rounds: usize,
    /// Independent pool draws averaged per probe.
    pub probe_repeats: usize,
    pub max_iters: usize,
}

impl Default for SizeSearchConfig {
    fn default() -> Self {
        Self {
            tolerance: None,
            s_init: 256,
            s_min: 32,
            s_max: 16384,
            probe_rounds: 3,
            probe_repeats: 5,
            max_iters: 30,
        }
    }
}

impl SizeSearchConfig {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.s_min == 0 || self.s_min > self.s_init || self.s_init > self.s_max {
            return Err((
                "s_init",
                format!("need 0 < s_min <= s_init <= s_max, got {} / {} / {}", self.s_min, self.s_init, self.s_max),
            ));
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0 && t.is_finite()) {
                return Err(("tolerance", format!("must be positive, got {t}")));
            }
        }
        if self.probe_rounds == 0 {
            return Err(("probe_rounds", "must be at least 1".into()));
        }
        if self.probe_repeats == 0 {
            return Err(("probe_repeats", "must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(("max_iters", "must be at least 1".into()));
        }
        Ok(())
    }

    pub fn tolerance_for(&self, target: f64) -> f64 {
        self.tolerance.unwrap_or(0.05 * target)
    }
}

/// What a probe needs from the server's side of the federation.
#[derive(Debug, Clone)]
pub struct ProbeContext<'a> {
    /// Broadcast models of the first rounds, in round order.
    pub globals: &'a [MlpModel],
    pub aux_pool: &'a Dataset,
    pub local: LocalTrainConfig,
    /// Mirror the victim's privatisation when set.
    pub ldp: Option<LdpConfig>,
}

/// Mean update norm of one IID draw of `size` samples, trained once from
/// each of the first `rounds` broadcast models.
pub fn probe_single(ctx: &ProbeContext<'_>, size: usize, rounds: usize, repeat: usize, stream: RngStream) -> Result<f64> {
    let rounds = rounds.min(ctx.globals.len());
    if rounds == 0 {
        return Err(Error::Validation("no broadcast models to probe from".into()));
    }
    let s = stream.child("repeat", repeat as u64);
    let draw = sample_uniform(ctx.aux_pool, size, s.child("draw", 0))?;
    let mut local = ctx.local;
    local.batch_size = local.batch_size.min(size);
    let client = ClientState::new(usize::MAX, draw.dataset, &local, s.child("seed", 0).rng().random())?;
    let mut total = 0.0;
    for (t, g) in ctx.globals[..rounds].iter().enumerate() {
        let up = local_train(g, &client, t + 1)?;
        let norm = match &ctx.ldp {
            Some(cfg) => privatize(&up, g.params(), cfg, s.child("ldp", t as u64))?.grad_norm,
            None => grad_l2_norm(&up.grad_update),
        };
        total += norm;
    }
    Ok(total / rounds as f64)
}

/// Mean of [`probe_single`] over `cfg.probe_repeats` draws.
pub fn probe_norm(ctx: &ProbeContext<'_>, size: usize, cfg: &SizeSearchConfig, stream: RngStream) -> Result<f64> {
    let mut total = 0.0;
    for r in 0..cfg.probe_repeats {
        total += probe_single(ctx, size, cfg.probe_rounds, r, stream)?;
    }
    Ok(total / cfg.probe_repeats as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Double,
    Halve,
    /// The next size had already been probed: the band lies between two
    /// neighbouring candidates.
    Oscillate,
    /// Clamped at a bound with the band still out of reach.
    Stuck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub iteration: usize,
    pub size: usize,
    pub norm: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeEstimate {
    pub size: usize,
    pub iterations: usize,
    /// Set when the result is the geometric mean of two oscillating sizes.
    pub oscillated: bool,
    pub target_norm: f64,
    pub tolerance: f64,
    pub trace: Vec<SearchStep>,
}

/// The doubling/halving search against an arbitrary probe function.
/// Each probed size is evaluated once; `iterations` counts probes.
pub fn search_size(
    target_norm: f64,
    cfg: &SizeSearchConfig,
    mut probe: impl FnMut(usize) -> Result<f64>,
) -> Result<SizeEstimate> {
    cfg.validate()
        .map_err(|(k, m)| Error::Validation(format!("{k} {m}")))?;
    if !(target_norm > 0.0 && target_norm.is_finite()) {
        return Err(Error::Validation(format!("target norm must be positive, got {target_norm}")));
    }
    let tol = cfg.tolerance_for(target_norm);
    let (lo, hi) = (target_norm - tol, target_norm + tol);
    let mut seen: BTreeMap<usize, f64> = BTreeMap::new();
    let mut trace = Vec::new();
    let mut best = (cfg.s_init, f64::INFINITY);
    let mut s = cfg.s_init;
    loop {
        if trace.len() >= cfg.max_iters {
            return Err(Error::SearchFailure {
                best: best.0,
                iterations: trace.len(),
                reason: format!("no size entered [{lo}, {hi}] within {} probes", cfg.max_iters),
            });
        }
        let norm = probe(s)?;
        seen.insert(s, norm);
        let iteration = trace.len() + 1;
        if (norm - target_norm).abs() < best.1 {
            best = (s, (norm - target_norm).abs());
        }
        let mut step = SearchStep {
            iteration,
            size: s,
            norm,
            decision: Decision::Accept,
        };
        if (lo..=hi).contains(&norm) {
            trace.push(step);
            return Ok(SizeEstimate {
                size: s,
                iterations: iteration,
                oscillated: false,
                target_norm,
                tolerance: tol,
                trace,
            });
        }
        let (next, decision) = if norm < lo {
            ((s * 2).min(cfg.s_max), Decision::Double)
        } else {
            ((s / 2).max(cfg.s_min), Decision::Halve)
        };
        if next == s {
            step.decision = Decision::Stuck;
            trace.push(step);
            return Err(Error::SearchFailure {
                best: best.0,
                iterations: iteration,
                reason: format!("size {s} is at a search bound and its norm {norm} is outside [{lo}, {hi}]"),
            });
        }
        if seen.contains_key(&next) {
            step.decision = Decision::Oscillate;
            trace.push(step);
            let size = ((s as f64) * (next as f64)).sqrt().round() as usize;
            return Ok(SizeEstimate {
                size,
                iterations: iteration,
                oscillated: true,
                target_norm,
                tolerance: tol,
                trace,
            });
        }
        step.decision = decision;
        trace.push(step);
        s = next;
    }
}

/// Searches for the size whose probe norm matches `target_norm`.
pub fn estimate_size(
    target_norm: f64,
    ctx: &ProbeContext<'_>,
    cfg: &SizeSearchConfig,
    stream: RngStream,
) -> Result<SizeEstimate> {
    search_size(target_norm, cfg, |s| probe_norm(ctx, s, cfg, stream.child("size", s as u64)))
}
