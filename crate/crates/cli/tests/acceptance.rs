//! Exit criteria for the whole system. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::checks::{
    attacker_grad_error, desk_config, lstm_grad_error, mlp_grad_error, norm_trend, size_stage, variance_slope,
};
use common::{random_simplex, transport_lp};
use ldia_core::attacker::LossKind;
use ldia_core::datasets::gen_synthetic;
use ldia_core::flsim::{run_federation, weighted_mean, ClientState, Federation, LocalTrainConfig, RoundObserver};
use ldia_core::harness::{
    build_federation, load_splits, parse_config, run_dp_sweep, run_experiment, ExperimentReport, FLRunConfig,
};
use ldia_core::metrics::{js, kl, wasserstein1d};
use ldia_core::numerics::{Activation, Segment};
use ldia_core::vclients::{build_cluster, ClusterObserver, ClusterPlan, ClusterRuntime};
use ldia_core::{LabelDistribution, MlpModel, ParameterVector, RngStream};

type Outcome = Result<String, String>;

fn config(name: &str) -> FLRunConfig {
    parse_config(workspace().join("configs").join(name)).expect("shipped config parses")
}

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn within(limit: Duration, start: Instant, ok: bool, detail: String) -> Outcome {
    let t = start.elapsed();
    let detail = format!("{detail}; {:.1}s (limit {}s)", t.as_secs_f64(), limit.as_secs());
    if ok && t < limit {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dist(v: Vec<f64>) -> LabelDistribution {
    LabelDistribution::new(v).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 4];
    for seed in 0..20 {
        let e = [
            mlp_grad_error(seed),
            lstm_grad_error(seed),
            attacker_grad_error(seed, LossKind::Kl),
            attacker_grad_error(seed, LossKind::Mse),
        ];
        for (w, v) in worst.iter_mut().zip(e) {
            *w = w.max(v);
        }
    }
    let ok = worst.iter().all(|&w| w < 1e-4);
    within(
        Duration::from_secs(10),
        start,
        ok,
        format!(
            "max rel err over 20 instances: mlp {:.1e}, lstm {:.1e}, attacker kl {:.1e}, mse {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = RngStream::root(2).rng();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let c = 1 + i % 4;
        let p = random_simplex(&mut rng, c);
        let q = random_simplex(&mut rng, c);
        let w = wasserstein1d(&dist(p.clone()), &dist(q.clone())).unwrap();
        worst = worst.max((w - transport_lp(&p, &q)).abs());
    }
    let js_err = (js(&dist(vec![1.0, 0.0]), &dist(vec![0.0, 1.0])).unwrap() - std::f64::consts::LN_2).abs();
    let kl_val = kl(&dist(vec![0.5, 0.5]), &dist(vec![0.25, 0.75])).unwrap();
    let detail = format!("transport max diff {worst:.1e}; js err {js_err:.1e}; kl {kl_val:.6}");
    if worst < 1e-9 && js_err <= 1e-12 && (kl_val - 0.1438).abs() <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fedavg_identities() -> Outcome {
    let data = gen_synthetic(3, 6, 60, 3.0, RngStream::root(30)).unwrap();
    let initial = MlpModel::init(&[6, 8, 3], &[Activation::Relu, Activation::Identity], RngStream::root(31)).unwrap();
    let local = LocalTrainConfig::default();
    let federation = |k: usize| Federation {
        initial: initial.clone(),
        clients: (0..k).map(|id| ClientState::new(id, data.clone(), &local, 7).unwrap()).collect(),
        rounds: 5,
        ldp: None,
        eval_set: None,
    };
    let single = run_federation(&federation(1), &mut []).unwrap().globals;
    let identical = (2..=5).all(|k| run_federation(&federation(k), &mut []).unwrap().globals == single);
    let pv = |v: f64| ParameterVector::from_values(vec![Segment::new("w", &[1])], vec![v]).unwrap();
    let mean = weighted_mean(&[&pv(0.0), &pv(4.0)], &[1, 3]).unwrap().values()[0];
    let detail = format!("K=2..5 identical trajectories: {identical}; weighted mean {mean}");
    if identical && mean == 3.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn size_trend() -> Outcome {
    let start = Instant::now();
    let increasing = (0..10)
        .filter(|&seed| norm_trend(seed).windows(2).all(|w| w[1] > w[0]))
        .count();
    let slope = variance_slope(0);
    within(
        Duration::from_secs(120),
        start,
        increasing >= 8 && (slope + 1.0).abs() <= 0.3,
        format!("strictly increasing in {increasing}/10 seeds; variance slope {slope:.3}"),
    )
}

fn size_estimation() -> Outcome {
    let start = Instant::now();
    let mut hits = 0;
    let mut sizes = Vec::new();
    let mut max_iters = 0;
    for seed in 0..10 {
        let s = size_stage(seed);
        let iterations = s.estimate.as_ref().map_or(usize::MAX, |e| e.iterations);
        max_iters = max_iters.max(iterations);
        if s.estimate.is_some() && (1000..=4000).contains(&s.used_size) && iterations <= 30 {
            hits += 1;
        }
        sizes.push(s.used_size);
    }
    within(
        Duration::from_secs(180),
        start,
        hits >= 8,
        format!("{hits}/10 in [1000, 4000]: {sizes:?}; max iterations {max_iters}"),
    )
}

fn evaluate(cfg: &FLRunConfig) -> ExperimentReport {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(cfg, dir.path()).expect("pipeline runs")
}

fn iid_attack() -> Outcome {
    let start = Instant::now();
    let r = evaluate(&config("iid.json"));
    let o = &r.held_out.as_ref().unwrap().overall;
    let v = r.victim.as_ref().unwrap();
    let (l1, uni) = (o.mean.l1, o.uniform_mean.l1);
    within(
        Duration::from_secs(600),
        start,
        l1 <= 0.35 && l1 <= 0.5 * uni && v.distances.l1 <= 0.45,
        format!(
            "held-out L1 {l1:.4} (uniform {uni:.4}, n={}); victim L1 {:.4}",
            o.count, v.distances.l1
        ),
    )
}

fn dirichlet_attack(r: &ExperimentReport) -> Outcome {
    let o = &r.held_out.as_ref().unwrap().overall;
    let (l1, uni) = (o.mean.l1, o.uniform_mean.l1);
    let detail = format!(
        "held-out L1 {l1:.4} (uniform {uni:.4}, n={}); argmax match {:.3}",
        o.count, o.argmax_match
    );
    if l1 <= 0.40 && l1 <= 0.5 * uni && o.argmax_match >= 0.70 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn quantity_attack() -> Outcome {
    let r = evaluate(&config("quantity.json"));
    let o = &r.held_out.as_ref().unwrap().overall;
    let detail = format!("mean mass on true support {:.4} (n={})", o.support_mass, o.count);
    if o.support_mass >= 0.6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Sweep on the Dirichlet configuration. The un-noised run supplies the
/// accuracy that the first budget is compared against.
fn dp_sweep(reference: &ExperimentReport) -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let r = run_dp_sweep(&config("dirichlet.json"), dir.path()).expect("sweep runs");
    let points = r.sweep.as_ref().unwrap();
    let eps: Vec<f64> = points.iter().map(|p| p.epsilon).collect();
    assert_eq!(eps, vec![40.0, 10.0, 5.0, 2.0, 1.0]);
    let mut acc = vec![reference.federation.as_ref().unwrap().victim_accuracy];
    acc.extend(points.iter().map(|p| p.victim_accuracy));
    let monotone = acc.windows(2).filter(|w| w[1] <= w[0]).count();
    let (first, last) = (&points[0], &points[4]);
    let rises = last.distances.l1 > first.distances.l1;
    let below_uniform = last.distances.l1 < last.uniform_l1;
    let l1s: Vec<String> = points.iter().map(|p| format!("{:.3}", p.distances.l1)).collect();
    let accs: Vec<String> = acc.iter().map(|a| format!("{a:.4}")).collect();
    within(
        Duration::from_secs(1800),
        start,
        monotone >= 4 && rises && below_uniform,
        format!(
            "accuracy (none,40,10,5,2,1) [{}] non-increasing in {monotone}/5 pairs; L1 [{}]; \
             L1(1) > L1(40): {rises}; L1(1) {:.3} < uniform {:.3}: {below_uniform}",
            accs.join(", "),
            l1s.join(", "),
            last.distances.l1,
            last.uniform_l1
        ),
    )
}

fn non_interference() -> Outcome {
    let cfg = desk_config(10, 10);
    let splits = load_splits(&cfg).unwrap();
    let (fed, _) = build_federation(&cfg, &splits).unwrap();
    let plan = ClusterPlan::balanced(24, cfg.cluster.delta, cfg.cluster.c_f.clone(), cfg.cluster.alpha.clone());
    let specs = build_cluster(&splits.aux, 500, &plan, RngStream::root(3)).unwrap();
    let runtime = ClusterRuntime {
        template: fed.initial.clone(),
        eval_set: splits.eval.clone(),
        local: cfg.local,
        mirror_ldp: None,
    };
    let plain = run_federation(&fed, &mut []).unwrap();
    let mut obs = ClusterObserver::new(&specs, &splits.aux, runtime).unwrap();
    let watched = run_federation(&fed, &mut [&mut obs as &mut dyn RoundObserver]).unwrap();
    let recorded = obs.into_matrices().len();
    let same = plain.globals == watched.globals && plain == watched;
    let detail = format!("{} globals bit-identical with {recorded} virtual clients attached: {same}", plain.globals.len());
    if same && recorded == 24 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn strip_wall_time(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"wall_time_secs\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_ldia");
    let cfg = workspace().join("configs").join("tiny.json");
    let root = tempfile::tempdir().unwrap();
    let commands = [
        "simulate",
        "estimate-size",
        "build-cluster",
        "train-attacker",
        "infer",
        "evaluate",
        "sweep-dp",
        "report",
    ];
    let run = |cmd: &str, out: &Path| -> Result<String, String> {
        let status = Command::new(bin)
            .arg(cmd)
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("{cmd}: {}", String::from_utf8_lossy(&status.stderr)));
        }
        std::fs::read_to_string(out.join("report.json")).map_err(|e| format!("{cmd}: {e}"))
    };
    let mut differing = Vec::new();
    for cmd in commands {
        let a = run(cmd, &root.path().join(format!("{cmd}-a")))?;
        let b = run(cmd, &root.path().join(format!("{cmd}-b")))?;
        if strip_wall_time(&a) != strip_wall_time(&b) {
            differing.push(cmd);
        }
    }
    let detail = format!("{} subcommands run twice; differing: {differing:?}", commands.len());
    if differing.is_empty() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {n:>2} {name}: {detail}");
    };
    report(1, "gradient fidelity", gradient_fidelity());
    report(2, "metric oracles", metric_oracles());
    report(3, "fedavg identities", fedavg_identities());
    report(4, "norm/size trend", size_trend());
    report(5, "size estimation", size_estimation());
    report(6, "iid attack", iid_attack());
    let start = Instant::now();
    let dirichlet = evaluate(&config("dirichlet.json"));
    report(
        7,
        "dirichlet attack",
        dirichlet_attack(&dirichlet).and_then(|d| within(Duration::from_secs(600), start, true, d)),
    );
    report(8, "quantity attack", quantity_attack());
    report(9, "privacy sweep", dp_sweep(&dirichlet));
    report(10, "non-interference", non_interference());
    report(11, "cli determinism", cli_determinism());
    if failed == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
