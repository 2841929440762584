//! The inference model: an LSTM unrolled over the rows of a temporal
//! matrix, additive attention over all hidden states, and a softmax head
//! producing a label distribution.

mod checkpoint;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabelDistribution;
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, Lstm, LstmStep, ParameterVector, RngStream, Segment};
use crate::vclients::TemporalMatrix;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{infer_distribution, train_attacker, AttackTrainConfig, EpochStats, LossKind, TrainingCurve};

/// `softmax(e)`, computed with the maximum subtracted.
pub fn softmax(e: &[f64]) -> Vec<f64> {
    let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Additive attention: `e_t = v . tanh(W h_t + b)`, `alpha = softmax(e)`,
/// context `sum_t alpha_t h_t`. `w` is `H x H` row-major.
pub fn attend(hs: &[Vec<f64>], w: &[f64], b: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = b.len();
    if hs.is_empty() {
        return Err(Error::Shape("attention over an empty sequence".into()));
    }
    if w.len() != h * h || v.len() != h || hs.iter().any(|x| x.len() != h) {
        return Err(Error::Shape(format!("attention expects width {h} throughout")));
    }
    let scores: Vec<f64> = hs.iter().map(|x| score(x, w, b, v).0).collect();
    let alpha = softmax(&scores);
    Ok((context(hs, &alpha), alpha))
}

fn score(x: &[f64], w: &[f64], b: &[f64], v: &[f64]) -> (f64, Vec<f64>) {
    let h = b.len();
    let u: Vec<f64> = (0..h).map(|i| (b[i] + dot(&w[i * h..(i + 1) * h], x)).tanh()).collect();
    (dot(v, &u), u)
}

fn context(hs: &[Vec<f64>], alpha: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; hs[0].len()];
    for (x, &a) in hs.iter().zip(alpha) {
        axpy(a, x, &mut c);
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerModel {
    classes: usize,
    hidden: usize,
    params: ParameterVector,
}

fn layout(classes: usize, hidden: usize) -> Vec<Segment> {
    let mut l = Lstm::new(classes, hidden).layout("lstm");
    l.push(Segment::new("attn.w", &[hidden, hidden]));
    l.push(Segment::new("attn.b", &[hidden]));
    l.push(Segment::new("attn.v", &[hidden]));
    l.push(Segment::new("head.w", &[classes, hidden]));
    l.push(Segment::new("head.b", &[classes]));
    l
}

/// Intermediate values kept for the backward pass.
struct Trace {
    steps: Vec<LstmStep>,
    us: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    ctx: Vec<f64>,
    q: Vec<f64>,
}

impl AttackerModel {
    pub fn zeros(classes: usize, hidden: usize) -> Result<Self> {
        if classes < 2 || hidden == 0 {
            return Err(Error::Validation("attacker needs at least 2 classes and a positive hidden width".into()));
        }
        Ok(Self {
            classes,
            hidden,
            params: ParameterVector::zeros(layout(classes, hidden)),
        })
    }

    /// LSTM initialised as in [`Lstm::init`]; attention and head weights
    /// uniform in `+-1/sqrt(H)`, their biases zero.
    pub fn init(classes: usize, hidden: usize, stream: RngStream) -> Result<Self> {
        let mut m = Self::zeros(classes, hidden)?;
        let lstm = m.lstm().init(stream.child("lstm", 0));
        m.params.values_mut()[..lstm.len()].copy_from_slice(&lstm);
        let k = 1.0 / (hidden as f64).sqrt();
        let mut rng = stream.child("dense", 0).rng();
        for name in ["attn.w", "attn.v", "head.w"] {
            for v in m.params.segment_mut(name).expect("layout") {
                *v = rng.random_range(-k..k);
            }
        }
        Ok(m)
    }

    pub fn from_params(classes: usize, hidden: usize, params: ParameterVector) -> Result<Self> {
        let m = Self::zeros(classes, hidden)?;
        m.params.ensure_same_layout(&params)?;
        Ok(Self { params, ..m })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    fn lstm(&self) -> Lstm {
        Lstm::new(self.classes, self.hidden)
    }

    fn seg(&self, name: &str) -> &[f64] {
        self.params.segment(name).expect("layout")
    }

    fn lstm_params(&self) -> &[f64] {
        &self.params.values()[..self.lstm().num_params()]
    }

    fn check(&self, r: &TemporalMatrix) -> Result<()> {
        if r.classes() != self.classes {
            return Err(Error::Shape(format!(
                "temporal matrix has {} columns, attacker expects {}",
                r.classes(),
                self.classes
            )));
        }
        if r.rounds() == 0 {
            return Err(Error::Shape("temporal matrix has no rounds".into()));
        }
        Ok(())
    }

    fn run(&self, r: &TemporalMatrix) -> Result<Trace> {
        self.check(r)?;
        let lstm = self.lstm();
        let p = self.lstm_params();
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut steps = Vec::with_capacity(r.rounds());
        for t in 0..r.rounds() {
            let s = lstm.step(p, r.row(t), &h, &c)?;
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            steps.push(s);
        }
        let (w, b, v) = (self.seg("attn.w"), self.seg("attn.b"), self.seg("attn.v"));
        let mut scores = Vec::with_capacity(steps.len());
        let mut us = Vec::with_capacity(steps.len());
        for s in &steps {
            let (e, u) = score(&s.h, w, b, v);
            scores.push(e);
            us.push(u);
        }
        let alpha = softmax(&scores);
        let hs: Vec<Vec<f64>> = steps.iter().map(|s| s.h.clone()).collect();
        let ctx = context(&hs, &alpha);
        let (hw, hb) = (self.seg("head.w"), self.seg("head.b"));
        let logits: Vec<f64> = (0..self.classes)
            .map(|k| hb[k] + dot(&hw[k * self.hidden..(k + 1) * self.hidden], &ctx))
            .collect();
        let q = softmax(&logits);
        Ok(Trace {
            steps,
            us,
            alpha,
            ctx,
            q,
        })
    }

    /// Predicted label distribution for one temporal matrix.
    pub fn forward(&self, r: &TemporalMatrix) -> Result<LabelDistribution> {
        let q = self.run(r)?.q;
        let s: f64 = q.iter().sum();
        LabelDistribution::new(q.iter().map(|v| v / s).collect())
    }

    /// Attention weights over rounds for one matrix.
    pub fn attention(&self, r: &TemporalMatrix) -> Result<Vec<f64>> {
        Ok(self.run(r)?.alpha)
    }

    /// Loss against `target` and its gradient with respect to all parameters.
    pub fn loss_and_grad(&self, r: &TemporalMatrix, target: &LabelDistribution, loss: LossKind) -> Result<(f64, ParameterVector)> {
        let mut grad = self.params.zeros_like();
        let l = self.accumulate(r, target, loss, 1.0, grad.values_mut())?;
        Ok((l, grad))
    }

    /// Adds `scale * dLoss/dparams` into `grad` and returns the loss.
    pub(crate) fn accumulate(
        &self,
        r: &TemporalMatrix,
        target: &LabelDistribution,
        loss: LossKind,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if target.classes() != self.classes {
            return Err(Error::Shape(format!(
                "target has {} classes, attacker {}",
                target.classes(),
                self.classes
            )));
        }
        let tr = self.run(r)?;
        let p = target.as_slice();
        let q = &tr.q;
        let c = self.classes;
        let hd = self.hidden;
        let (value, dz) = match loss {
            LossKind::Kl => {
                let mut v = 0.0;
                for (&a, &b) in p.iter().zip(q) {
                    if a > 0.0 {
                        v += a * (a / b.max(f64::MIN_POSITIVE)).ln();
                    }
                }
                (v, q.iter().zip(p).map(|(b, a)| scale * (b - a)).collect::<Vec<_>>())
            }
            LossKind::Mse => {
                let v = q.iter().zip(p).map(|(b, a)| (b - a).powi(2)).sum::<f64>() / c as f64;
                let dq: Vec<f64> = q.iter().zip(p).map(|(b, a)| 2.0 * (b - a) / c as f64).collect();
                let qdq = dot(q, &dq);
                (v, q.iter().zip(&dq).map(|(&qi, &d)| scale * qi * (d - qdq)).collect())
            }
        };

        let off = |name: &str| self.params.span(name).expect("layout");
        // Head.
        let (hw0, _) = off("head.w");
        let (hb0, _) = off("head.b");
        let hw = self.seg("head.w");
        let mut dctx = vec![0.0; hd];
        for k in 0..c {
            axpy(dz[k], &tr.ctx, &mut grad[hw0 + k * hd..hw0 + (k + 1) * hd]);
            grad[hb0 + k] += dz[k];
            axpy(dz[k], &hw[k * hd..(k + 1) * hd], &mut dctx);
        }

        // Attention.
        let e = tr.steps.len();
        let dalpha: Vec<f64> = tr.steps.iter().map(|s| dot(&dctx, &s.h)).collect();
        let mean = dot(&tr.alpha, &dalpha);
        let mut dh: Vec<Vec<f64>> = tr.alpha.iter().map(|&a| dctx.iter().map(|d| a * d).collect()).collect();
        let (w, v) = (self.seg("attn.w"), self.seg("attn.v"));
        let (w0, _) = off("attn.w");
        let (b0, _) = off("attn.b");
        let (v0, _) = off("attn.v");
        for t in 0..e {
            let de = tr.alpha[t] * (dalpha[t] - mean);
            if de == 0.0 {
                continue;
            }
            let u = &tr.us[t];
            axpy(de, u, &mut grad[v0..v0 + hd]);
            for i in 0..hd {
                let da = de * v[i] * (1.0 - u[i] * u[i]);
                axpy(da, &tr.steps[t].h, &mut grad[w0 + i * hd..w0 + (i + 1) * hd]);
                grad[b0 + i] += da;
                axpy(da, &w[i * hd..(i + 1) * hd], &mut dh[t]);
            }
        }

        // LSTM, backwards through time.
        let lstm = self.lstm();
        let np = lstm.num_params();
        let lp = self.lstm_params();
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for t in (0..e).rev() {
            for (a, b) in dh[t].iter_mut().zip(&dh_next) {
                *a += b;
            }
            let (_, dhp, dcp) = lstm.step_backward(lp, &tr.steps[t], &dh[t], &dc_next, &mut grad[..np]);
            dh_next = dhp;
            dc_next = dcp;
        }
        Ok(value)
    }
}
