//! Measurements shared by the integration tests and the acceptance suite.

use ldia_core::attacker::{AttackerModel, LossKind};
use ldia_core::flsim::run_federation;
use ldia_core::harness::{build_federation, load_splits, parse_config_str, run_pipeline, FLRunConfig, SizeStage, Stage};
use ldia_core::numerics::{Activation, Lstm, LstmStep};
use ldia_core::sizeest::{probe_norm, ProbeContext, SizeSearchConfig};
use ldia_core::{LabelDistribution, MlpModel, RngStream, Tensor2, TemporalMatrix};
use rand::Rng;

use super::{central_diff, max_rel_err, random_simplex};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors of near-zero gradient entries.
pub const FD_FLOOR: f64 = 1e-6;

/// Random small MLP (at most 200 parameters) on a random batch.
pub fn mlp_grad_error(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 101).rng();
    let input = rng.random_range(2..=5);
    let hidden = rng.random_range(2..=6);
    let classes = rng.random_range(2..=4);
    let act = [Activation::Relu, Activation::Tanh, Activation::Identity][rng.random_range(0..3)];
    let model = MlpModel::init(&[input, hidden, classes], &[act, Activation::Identity], RngStream::new(seed, 102)).unwrap();
    assert!(model.params().len() <= 200);
    let n = rng.random_range(3..=6);
    let x = Tensor2::new(n, input, (0..n * input).map(|_| rng.random::<f64>()).collect()).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let (_, grad) = model.loss_and_grad(&x, &labels).unwrap();
    let f = |p: &[f64]| {
        let m = model.with_params(model.params().with_values(p.to_vec()).unwrap()).unwrap();
        m.loss_and_grad(&x, &labels).unwrap().0
    };
    max_rel_err(grad.values(), &central_diff(f, model.params().values(), FD_STEP), FD_FLOOR)
}

/// A three-step LSTM unroll scored by a random linear readout of every
/// hidden state and the final cell state.
pub fn lstm_grad_error(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 201).rng();
    let cell = Lstm::new(rng.random_range(1..=3), rng.random_range(1..=3));
    let p = cell.init(RngStream::new(seed, 202));
    let steps = 3;
    let xs: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..cell.input).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let rh: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..cell.hidden).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let rc: Vec<f64> = (0..cell.hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
    let unroll = |p: &[f64]| -> Vec<LstmStep> {
        let mut h = vec![0.0; cell.hidden];
        let mut c = vec![0.0; cell.hidden];
        xs.iter()
            .map(|x| {
                let s = cell.step(p, x, &h, &c).unwrap();
                h = s.h.clone();
                c = s.c.clone();
                s
            })
            .collect()
    };
    let loss = |p: &[f64]| -> f64 {
        let st = unroll(p);
        let mut l: f64 = st.iter().zip(&rh).map(|(s, r)| dot(&s.h, r)).sum();
        l += dot(&st[steps - 1].c, &rc);
        l
    };
    let st = unroll(&p);
    let mut grad = vec![0.0; p.len()];
    let mut dh = rh[steps - 1].clone();
    let mut dc = rc.clone();
    for t in (0..steps).rev() {
        let (_, dh_prev, dc_prev) = cell.step_backward(&p, &st[t], &dh, &dc, &mut grad);
        if t > 0 {
            dh = dh_prev.iter().zip(&rh[t - 1]).map(|(a, b)| a + b).collect();
            dc = dc_prev;
        }
    }
    max_rel_err(&grad, &central_diff(loss, &p, FD_STEP), FD_FLOOR)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The full attacker (LSTM, attention, head) on a 3-round, C=3 matrix.
pub fn attacker_grad_error(seed: u64, loss: LossKind) -> f64 {
    let mut rng = RngStream::new(seed, 301).rng();
    let classes = 3;
    let hidden = rng.random_range(2..=4);
    let model = AttackerModel::init(classes, hidden, RngStream::new(seed, 302)).unwrap();
    let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..classes).map(|_| rng.random::<f64>()).collect()).collect();
    let r = TemporalMatrix::from_rows(&rows).unwrap();
    let target = LabelDistribution::new(random_simplex(&mut rng, classes)).unwrap();
    let (_, grad) = model.loss_and_grad(&r, &target, loss).unwrap();
    let f = |p: &[f64]| {
        let m = AttackerModel::from_params(classes, hidden, model.params().with_values(p.to_vec()).unwrap()).unwrap();
        m.loss_and_grad(&r, &target, loss).unwrap().0
    };
    max_rel_err(grad.values(), &central_diff(f, model.params().values(), FD_STEP), FD_FLOOR)
}

/// Slope of log(variance of batch-mean gradients) against log(B) for
/// B in {4, 16, 64}, batches drawn with replacement from a fixed dataset.
pub fn variance_slope(seed: u64) -> f64 {
    let data = ldia_core::datasets::gen_synthetic(3, 4, 100, 2.0, RngStream::new(seed, 401)).unwrap();
    let model = MlpModel::init(&[4, 5, 3], &[Activation::Tanh, Activation::Identity], RngStream::new(seed, 402)).unwrap();
    let (_, full) = model.loss_and_grad(data.features(), data.labels()).unwrap();
    let mut rng = RngStream::new(seed, 403).rng();
    let sizes = [4usize, 16, 64];
    let mut logs = Vec::new();
    for &b in &sizes {
        let draws = 400;
        let mut total = 0.0;
        for _ in 0..draws {
            let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.len())).collect();
            let x = data.features().select_rows(&idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
            let (_, g) = model.loss_and_grad(&x, &y).unwrap();
            total += g.values().iter().zip(full.values()).map(|(a, f)| (a - f).powi(2)).sum::<f64>();
        }
        logs.push((total / draws as f64).ln());
    }
    let xs: Vec<f64> = sizes.iter().map(|&b| (b as f64).ln()).collect();
    super::slope(&xs, &logs)
}

/// Desk-scale synthetic configuration with the given seed and rounds.
pub fn desk_config(seed: u64, rounds: usize) -> FLRunConfig {
    parse_config_str(&format!(r#"{{"dataset": {{"kind": "synthetic"}}, "rounds": {rounds}, "seed": {seed}}}"#)).unwrap()
}

pub const TREND_SIZES: [usize; 5] = [200, 600, 1000, 1600, 2000];

/// Mean update norm over the first three broadcasts of a desk-scale
/// federation, for uniform auxiliary draws at each of [`TREND_SIZES`].
pub fn norm_trend(seed: u64) -> Vec<f64> {
    let cfg = desk_config(seed, 3);
    let splits = load_splits(&cfg).unwrap();
    let (fed, _) = build_federation(&cfg, &splits).unwrap();
    let history = run_federation(&fed, &mut []).unwrap();
    let globals: Vec<MlpModel> = (1..=3)
        .map(|t| fed.initial.with_params(history.broadcast(t).clone()).unwrap())
        .collect();
    let ctx = ProbeContext {
        globals: &globals,
        aux_pool: &splits.aux,
        local: cfg.local,
        ldp: None,
    };
    let sc = SizeSearchConfig::default();
    TREND_SIZES
        .iter()
        .map(|&s| probe_norm(&ctx, s, &sc, RngStream::new(seed, 501).child("size", s as u64)).unwrap())
        .collect()
}

/// Size stage of the desk pipeline: victim of 2000 IID samples, auxiliary
/// pool of 20000.
pub fn size_stage(seed: u64) -> SizeStage {
    let cfg = desk_config(seed, 3);
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&cfg, dir.path(), Stage::EstimateSize, "estimate-size").unwrap();
    report.size.unwrap()
}
