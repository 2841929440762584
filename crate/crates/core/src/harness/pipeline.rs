//! The staged experiment: federation with a victim, size estimation,
//! virtual cluster, attacker training, inference and scoring. Every random
//! choice is drawn from a stream under the master seed.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;

use super::baselines::{baseline_lastlayer, baseline_uniform};
use super::config::{DatasetSource, FLRunConfig, RegimeKind};
use super::report::{
    write_json, Baseline, ClusterSummary, ExperimentReport, FederationSummary, GroupSummary, HeldOutClient,
    HeldOutSummary, SizeStage, SweepPoint, TrainingSummary, VictimResult,
};
use crate::attacker::{infer_distribution, load_checkpoint, save_checkpoint, train_attacker, AttackerModel};
use crate::datasets::{gen_synthetic, load_idx, partition_with_regime, ClientSample, Dataset, LabelDistribution, Regime};
use crate::error::{Error, Result, StageExt};
use crate::flsim::{run_federation, write_history_jsonl, ClientState, Federation, FederationHistory, LdpConfig};
use crate::metrics::{l1, DistanceReport};
use crate::numerics::{MlpModel, RngStream};
use crate::sizeest::{estimate_size, ProbeContext};
use crate::vclients::{
    build_cluster, per_class_accuracy, persist_cluster, record_victim, run_cluster, ClusterPlan, ClusterRuntime,
    TemporalMatrix, VirtualClientSpec,
};

/// Pipeline depth, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    EstimateSize,
    BuildCluster,
    TrainAttacker,
    Infer,
    Evaluate,
}

/// Client id of the victim in every federation.
pub const VICTIM_ID: usize = 0;

const MAX_REDRAWS: u64 = 50;

/// Disjoint evaluation, auxiliary and client pools.
#[derive(Debug, Clone)]
pub struct Splits {
    pub eval: Dataset,
    pub aux: Dataset,
    pub clients: Dataset,
}

fn root(cfg: &FLRunConfig) -> RngStream {
    RngStream::root(cfg.seed)
}

fn seed_of(stream: RngStream) -> u64 {
    stream.rng().random()
}

pub fn load_splits(cfg: &FLRunConfig) -> Result<Splits> {
    let data = match &cfg.dataset {
        DatasetSource::Synthetic {
            classes,
            dim,
            per_class_pool,
            sep,
        } => gen_synthetic(*classes, *dim, *per_class_pool, *sep, root(cfg).child("data", 0))?,
        DatasetSource::Idx { images, labels } => load_idx(images, labels)?,
    };
    cfg.validate_for_classes(data.classes())?;
    let (eval, rest) = data.split_per_class(cfg.split.eval_per_class)?;
    let (aux, clients) = rest.split_per_class(cfg.split.aux_per_class)?;
    Ok(Splits { eval, aux, clients })
}

/// Partitions with fresh draws after capacity failures.
fn draw(pool: &Dataset, size: usize, regime: Regime, stream: RngStream) -> Result<ClientSample> {
    let mut last = None;
    for attempt in 0..MAX_REDRAWS {
        match partition_with_regime(pool, size, regime, stream.derive(attempt)) {
            Ok(s) => return Ok(s),
            Err(e @ Error::Capacity(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

pub fn template_model(cfg: &FLRunConfig, splits: &Splits) -> Result<MlpModel> {
    let (dims, acts) = cfg.model.dims(splits.eval.dim(), splits.eval.classes());
    MlpModel::init(&dims, &acts, root(cfg).child("model", 0))
}

/// The victim (id 0) and the benign clients, ready to run.
pub fn build_federation(cfg: &FLRunConfig, splits: &Splits) -> Result<(Federation, LabelDistribution)> {
    let r = root(cfg);
    let initial = template_model(cfg, splits)?;
    let v = &cfg.victim;
    let victim = draw(&splits.clients, v.size, v.regime, r.child("victim", v.seed))?;
    let truth = victim.distribution.clone();
    let mut taken = vec![false; splits.clients.len()];
    for &i in &victim.indices {
        taken[i] = true;
    }
    let rest: Vec<usize> = (0..splits.clients.len()).filter(|&i| !taken[i]).collect();
    let others_pool = splits.clients.subset(&rest);
    let mut clients = vec![ClientState::new(
        VICTIM_ID,
        victim.dataset,
        &cfg.local,
        seed_of(r.child("victim-seed", v.seed)),
    )?];
    let f = &cfg.federation;
    for k in 1..=f.clients {
        let s = draw(&others_pool, f.client_size, f.regime, r.child("client", k as u64))?;
        clients.push(ClientState::new(k, s.dataset, &cfg.local, seed_of(r.child("client-seed", k as u64)))?);
    }
    let fed = Federation {
        initial,
        clients,
        rounds: cfg.rounds,
        ldp: cfg.ldp,
        eval_set: Some(splits.eval.clone()),
    };
    Ok((fed, truth))
}

/// Overall accuracy of the victim's own models, averaged over the last
/// (up to) five rounds.
pub fn victim_accuracy(template: &MlpModel, history: &FederationHistory, eval: &Dataset) -> Result<f64> {
    let retained = history.retained_of(VICTIM_ID)?;
    let tail = &retained[retained.len().saturating_sub(5)..];
    let mut total = 0.0;
    for p in tail {
        let acc = per_class_accuracy(&template.with_params((*p).clone())?, eval)?;
        total += acc.iter().sum::<f64>() / acc.len() as f64;
    }
    Ok(total / tail.len() as f64)
}

struct FedRun {
    fed: Federation,
    history: FederationHistory,
    truth: LabelDistribution,
}

fn simulate(cfg: &FLRunConfig, splits: &Splits) -> Result<FedRun> {
    let (fed, truth) = build_federation(cfg, splits)?;
    let history = run_federation(&fed, &mut [])?;
    Ok(FedRun { fed, history, truth })
}

fn estimate(cfg: &FLRunConfig, splits: &Splits, run: &FedRun) -> Result<SizeStage> {
    let rounds = cfg.size_search.probe_rounds.min(cfg.rounds);
    let uploads = run.history.uploads_of(VICTIM_ID)?;
    let target_norm = uploads[..rounds].iter().map(|u| u.grad_norm).sum::<f64>() / rounds as f64;
    let globals = (1..=rounds)
        .map(|t| run.fed.initial.with_params(run.history.broadcast(t).clone()))
        .collect::<Result<Vec<_>>>()?;
    let ctx = ProbeContext {
        globals: &globals,
        aux_pool: &splits.aux,
        local: cfg.local,
        ldp: if cfg.mirror_ldp { cfg.ldp } else { None },
    };
    let mut sc = cfg.size_search;
    sc.probe_rounds = rounds;
    match estimate_size(target_norm, &ctx, &sc, root(cfg).child("size", 0)) {
        Ok(est) => Ok(SizeStage {
            target_norm,
            used_size: est.size,
            estimate: Some(est),
            failure: None,
        }),
        Err(Error::SearchFailure {
            best,
            iterations,
            reason,
        }) => Ok(SizeStage {
            target_norm,
            used_size: best,
            estimate: None,
            failure: Some(format!("{reason} after {iterations} probes; using best candidate {best}")),
        }),
        Err(e) => Err(e),
    }
}

pub fn cluster_plan(cfg: &FLRunConfig) -> ClusterPlan {
    let cl = &cfg.cluster;
    let mut kinds = cl.regimes.clone();
    kinds.sort();
    kinds.dedup();
    let n = cl.train + cl.test;
    let mut counts = BTreeMap::new();
    for (i, k) in kinds.iter().enumerate() {
        counts.insert(*k, n / kinds.len() + usize::from(i < n % kinds.len()));
    }
    let get = |k| counts.get(&k).copied().unwrap_or(0);
    ClusterPlan {
        iid: get(RegimeKind::Iid),
        quantity: get(RegimeKind::Quantity),
        dirichlet: get(RegimeKind::Dirichlet),
        delta: cl.delta,
        c_f: cl.c_f.clone(),
        alpha: cl.alpha.clone(),
        jitter: cl.jitter,
    }
}

struct ClusterRun {
    specs: Vec<VirtualClientSpec>,
    matrices: Vec<TemporalMatrix>,
    victim_matrix: TemporalMatrix,
}

/// Largest base size the auxiliary pool can reliably serve: half of what a
/// member holding the fewest classes could take after jitter, leaving room
/// for uneven proportions among its classes. Label-quantity members hold
/// `min(c_f)` classes, all others every class.
pub fn cluster_size_cap(cfg: &FLRunConfig, aux: &Dataset) -> usize {
    let min_class = aux.class_counts().into_iter().min().unwrap_or(0);
    let held = if cfg.cluster.regimes.contains(&RegimeKind::Quantity) {
        cfg.cluster.c_f.iter().copied().min().unwrap_or(1)
    } else {
        aux.classes()
    };
    ((min_class * held) as f64 / (2.0 * (1.0 + cfg.cluster.jitter))).floor() as usize
}

fn cluster(cfg: &FLRunConfig, splits: &Splits, run: &FedRun, size: usize) -> Result<ClusterRun> {
    let specs = build_cluster(&splits.aux, size, &cluster_plan(cfg), root(cfg).child("cluster", 0))?;
    let runtime = ClusterRuntime {
        template: run.fed.initial.clone(),
        eval_set: splits.eval.clone(),
        local: cfg.local,
        mirror_ldp: if cfg.mirror_ldp { cfg.ldp } else { None },
    };
    let matrices = run_cluster(&specs, &splits.aux, runtime, &run.history.globals[..cfg.rounds])?;
    let uploads: Vec<_> = run.history.uploads_of(VICTIM_ID)?.into_iter().map(|u| &u.params).collect();
    let victim_matrix = record_victim(&run.fed.initial, &uploads, &splits.eval)?;
    Ok(ClusterRun {
        specs,
        matrices,
        victim_matrix,
    })
}

fn attacker_config(cfg: &FLRunConfig) -> crate::attacker::AttackTrainConfig {
    let mut a = cfg.attacker;
    a.seed = seed_of(root(cfg).child("attacker", cfg.attacker.seed));
    a
}

fn train(cfg: &FLRunConfig, cl: &ClusterRun) -> Result<(AttackerModel, TrainingSummary)> {
    let pairs: Vec<_> = cl.specs[..cfg.cluster.train]
        .iter()
        .zip(&cl.matrices)
        .map(|(s, m)| (m.clone(), s.true_distribution.clone()))
        .collect();
    let (model, curve) = train_attacker(&pairs, &attacker_config(cfg))?;
    let last = curve.epochs.last();
    let summary = TrainingSummary {
        epochs: curve.epochs.len(),
        best_epoch: curve.best_epoch,
        best_val_loss: last.map_or(f64::NAN, |e| e.best_val_loss),
        final_train_loss: last.map_or(f64::NAN, |e| e.train_loss),
        train_loss: curve.epochs.iter().map(|e| e.train_loss).collect(),
        val_loss: curve.epochs.iter().map(|e| e.val_loss).collect(),
    };
    Ok((model, summary))
}

fn group(clients: &[&HeldOutClient]) -> Result<GroupSummary> {
    let n = clients.len();
    let reports: Vec<DistanceReport> = clients.iter().map(|c| c.distances).collect();
    let uniform: Vec<DistanceReport> = clients.iter().map(|c| c.uniform).collect();
    let hits = clients
        .iter()
        .filter(|c| c.predicted.argmax() == c.truth.argmax())
        .count();
    let support: f64 = clients
        .iter()
        .map(|c| {
            c.truth
                .as_slice()
                .iter()
                .zip(c.predicted.as_slice())
                .filter(|(t, _)| **t > 0.0)
                .map(|(_, p)| p)
                .sum::<f64>()
        })
        .sum();
    let empty = DistanceReport {
        wasserstein: 0.0,
        kl: 0.0,
        js: 0.0,
        l1: 0.0,
    };
    Ok(GroupSummary {
        count: n,
        mean: DistanceReport::mean(&reports).unwrap_or(empty),
        uniform_mean: DistanceReport::mean(&uniform).unwrap_or(empty),
        argmax_match: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        support_mass: if n == 0 { 0.0 } else { support / n as f64 },
    })
}

fn held_out(cfg: &FLRunConfig, model: &AttackerModel, cl: &ClusterRun) -> Result<HeldOutSummary> {
    let classes = model.classes();
    let uniform = baseline_uniform(classes)?;
    let mut clients = Vec::new();
    for (s, m) in cl.specs.iter().zip(&cl.matrices).skip(cfg.cluster.train) {
        let predicted = infer_distribution(model, m)?;
        clients.push(HeldOutClient {
            id: s.id,
            regime: s.regime,
            distances: DistanceReport::compute(&s.true_distribution, &predicted)?,
            uniform: DistanceReport::compute(&s.true_distribution, &uniform)?,
            truth: s.true_distribution.clone(),
            predicted,
        });
    }
    let all: Vec<&HeldOutClient> = clients.iter().collect();
    let overall = group(&all)?;
    let mut by_regime = BTreeMap::new();
    for name in ["iid", "quantity", "dirichlet"] {
        let sub: Vec<&HeldOutClient> = clients.iter().filter(|c| c.regime.name() == name).collect();
        if !sub.is_empty() {
            by_regime.insert(name.to_string(), group(&sub)?);
        }
    }
    Ok(HeldOutSummary {
        overall,
        by_regime,
        clients,
    })
}

fn victim_result(run: &FedRun, model: &AttackerModel, cl: &ClusterRun) -> Result<VictimResult> {
    let predicted = infer_distribution(model, &cl.victim_matrix)?;
    let uniform = baseline_uniform(model.classes())?;
    let uploads = run.history.uploads_of(VICTIM_ID)?;
    let lastlayer = baseline_lastlayer(&uploads, &run.fed.initial.output_bias_name())?;
    Ok(VictimResult {
        distances: DistanceReport::compute(&run.truth, &predicted)?,
        uniform: Baseline {
            distances: DistanceReport::compute(&run.truth, &uniform)?,
            distribution: uniform,
        },
        lastlayer: Baseline {
            distances: DistanceReport::compute(&run.truth, &lastlayer)?,
            distribution: lastlayer,
        },
        truth: run.truth.clone(),
        predicted,
    })
}

const CHECKPOINT: &str = "attacker.ckpt";
const CHECKPOINT_META: &str = "attacker.meta.json";

/// A checkpoint left by an earlier run of the same configuration.
fn cached_attacker(out: &Path, hash: &str) -> Option<AttackerModel> {
    let meta = std::fs::read_to_string(out.join(CHECKPOINT_META)).ok()?;
    let v: serde_json::Value = serde_json::from_str(&meta).ok()?;
    if v.get("config_hash")?.as_str()? != hash {
        return None;
    }
    load_checkpoint(out.join(CHECKPOINT)).ok()
}

fn store_attacker(out: &Path, hash: &str, model: &AttackerModel) -> Result<()> {
    save_checkpoint(model, out.join(CHECKPOINT))?;
    write_json(out.join(CHECKPOINT_META), &serde_json::json!({ "config_hash": hash }))
}

/// Runs the pipeline up to and including `until`, writing artifacts under
/// `out`, and returns the report (also written as `report.json`).
pub fn run_pipeline(cfg: &FLRunConfig, out: &Path, until: Stage, command: &str) -> Result<ExperimentReport> {
    let start = Instant::now();
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let splits = load_splits(cfg).stage("data")?;
    let classes = splits.eval.classes();
    let hash = cfg.hash();
    let mut report = ExperimentReport::new(command, cfg, classes);

    let run = simulate(cfg, &splits).stage("federation")?;
    write_history_jsonl(&run.history, out.join("history.jsonl")).stage("federation")?;
    let victim_norms: Vec<f64> = run.history.uploads_of(VICTIM_ID)?.iter().map(|u| u.grad_norm).collect();
    report.federation = Some(FederationSummary {
        rounds: cfg.rounds,
        clients: run.fed.clients.len(),
        victim_size: run.fed.clients[VICTIM_ID].dataset.len(),
        victim_truth: run.truth.clone(),
        victim_grad_norms: victim_norms,
        victim_accuracy: victim_accuracy(&run.fed.initial, &run.history, &splits.eval)?,
        final_global_accuracy: run
            .history
            .global_accuracy
            .last()
            .map_or(0.0, |a| a.iter().sum::<f64>() / a.len() as f64),
        epsilon: cfg.ldp.map(|l| l.epsilon),
    });

    let finish = |mut report: ExperimentReport| -> Result<ExperimentReport> {
        report.wall_time_secs = start.elapsed().as_secs_f64();
        report.write(out.join("report.json"))?;
        Ok(report)
    };
    if until == Stage::Simulate {
        return finish(report);
    }

    let size = estimate(cfg, &splits, &run).stage("size-estimation")?;
    write_json(out.join("search_trace.json"), &size).stage("size-estimation")?;
    let est_size = size.used_size;
    report.size = Some(size);
    if until == Stage::EstimateSize {
        return finish(report);
    }

    let cluster_size = est_size.min(cluster_size_cap(cfg, &splits.aux));
    let cl = cluster(cfg, &splits, &run, cluster_size).stage("cluster")?;
    persist_cluster(out, &cl.specs, &cl.matrices).stage("cluster")?;
    cl.victim_matrix.write_csv(out.join("temporal").join("victim.csv")).stage("cluster")?;
    let mut regimes = BTreeMap::new();
    for s in &cl.specs {
        *regimes.entry(s.regime.name().to_string()).or_insert(0) += 1;
    }
    report.cluster = Some(ClusterSummary {
        estimated_size: est_size,
        client_size: cluster_size,
        train: cfg.cluster.train,
        test: cfg.cluster.test,
        regimes,
    });
    if until == Stage::BuildCluster {
        return finish(report);
    }

    let model = if until == Stage::Infer {
        match cached_attacker(out, &hash) {
            Some(m) => m,
            None => {
                let (m, _) = train(cfg, &cl).stage("attacker")?;
                store_attacker(out, &hash, &m).stage("attacker")?;
                m
            }
        }
    } else {
        let (m, summary) = train(cfg, &cl).stage("attacker")?;
        store_attacker(out, &hash, &m).stage("attacker")?;
        report.training = Some(summary);
        m
    };
    if until == Stage::TrainAttacker {
        return finish(report);
    }

    report.victim = Some(victim_result(&run, &model, &cl).stage("inference")?);
    if until == Stage::Evaluate {
        report.held_out = Some(held_out(cfg, &model, &cl).stage("evaluation")?);
    }
    finish(report)
}

/// The full pipeline.
pub fn run_experiment(cfg: &FLRunConfig, out: &Path) -> Result<ExperimentReport> {
    run_pipeline(cfg, out, Stage::Evaluate, "evaluate")
}

/// L1 of the uniform prediction against `truth`.
pub fn uniform_l1(truth: &LabelDistribution) -> Result<f64> {
    l1(truth, &baseline_uniform(truth.classes())?)
}

/// The full pipeline once per privacy budget in `dp_sweep.epsilons`, each
/// under `out/eps_<epsilon>/`. The returned report carries one sweep point
/// per budget, in configuration order.
pub fn run_dp_sweep(cfg: &FLRunConfig, out: &Path) -> Result<ExperimentReport> {
    let start = Instant::now();
    cfg.validate()?;
    let mut points = Vec::new();
    let mut classes = 0;
    for &epsilon in &cfg.dp_sweep.epsilons {
        let mut c = cfg.clone();
        let mut ldp = cfg.ldp.unwrap_or(LdpConfig::new(epsilon));
        ldp.epsilon = epsilon;
        c.ldp = Some(ldp);
        let r = run_pipeline(&c, &out.join(format!("eps_{epsilon}")), Stage::Evaluate, "evaluate")?;
        classes = r.classes;
        let (Some(f), Some(v)) = (r.federation, r.victim) else {
            unreachable!("a full run reports federation and victim results")
        };
        points.push(SweepPoint {
            epsilon,
            distances: v.distances,
            uniform_l1: v.uniform.distances.l1,
            victim_accuracy: f.victim_accuracy,
        });
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut report = ExperimentReport::new("sweep-dp", cfg, classes);
    report.sweep = Some(points);
    report.wall_time_secs = start.elapsed().as_secs_f64();
    report.write(out.join("report.json"))?;
    Ok(report)
}
