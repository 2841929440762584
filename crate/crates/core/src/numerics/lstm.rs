use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::Segment;
use super::rng::RngStream;
use super::tensor::{axpy, dot};
use crate::error::{Error, Result};

/// Shape of a single LSTM cell.
///
/// Parameters are one contiguous block laid out as `w_ih` (4H x input),
/// `w_hh` (4H x H) and `b` (4H), with gate rows ordered input, forget,
/// candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Lstm {
    pub fn new(input: usize, hidden: usize) -> Self {
        Self { input, hidden }
    }

    pub fn layout(&self, prefix: &str) -> Vec<Segment> {
        let g = 4 * self.hidden;
        vec![
            Segment::new(format!("{prefix}.w_ih"), &[g, self.input]),
            Segment::new(format!("{prefix}.w_hh"), &[g, self.hidden]),
            Segment::new(format!("{prefix}.b"), &[g]),
        ]
    }

    pub fn num_params(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden + 1)
    }

    /// Uniform(-1/sqrt(H), 1/sqrt(H)) weights and biases, forget-gate bias
    /// shifted by +1.
    pub fn init(&self, stream: RngStream) -> Vec<f64> {
        let mut rng = stream.rng();
        let k = 1.0 / (self.hidden as f64).sqrt();
        let mut p: Vec<f64> = (0..self.num_params()).map(|_| rng.random_range(-k..k)).collect();
        let h = self.hidden;
        let b0 = 4 * h * (self.input + h);
        for v in &mut p[b0 + h..b0 + 2 * h] {
            *v += 1.0;
        }
        p
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let g = 4 * self.hidden;
        let (w_ih, rest) = p.split_at(g * self.input);
        let (w_hh, b) = rest.split_at(g * self.hidden);
        (w_ih, w_hh, b)
    }

    fn check(&self, p: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "lstm expects {} parameters, got {}",
                self.num_params(),
                p.len()
            )));
        }
        if x.len() != self.input || h.len() != self.hidden || c.len() != self.hidden {
            return Err(Error::Shape(format!(
                "lstm widths: x {} (want {}), h {} / c {} (want {})",
                x.len(),
                self.input,
                h.len(),
                c.len(),
                self.hidden
            )));
        }
        Ok(())
    }

    pub fn step(&self, p: &[f64], x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmStep> {
        self.check(p, x, h_prev, c_prev)?;
        let hd = self.hidden;
        let (w_ih, w_hh, b) = self.split(p);
        let mut gates = vec![0.0; 4 * hd];
        for (r, g) in gates.iter_mut().enumerate() {
            let z = b[r]
                + dot(&w_ih[r * self.input..(r + 1) * self.input], x)
                + dot(&w_hh[r * hd..(r + 1) * hd], h_prev);
            *g = if (2 * hd..3 * hd).contains(&r) {
                z.tanh()
            } else {
                sigmoid(z)
            };
        }
        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        Ok(LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            tanh_c,
            h,
            c,
        })
    }

    /// Backpropagates `dh`/`dc` (gradients w.r.t. this step's outputs)
    /// through the step, adding parameter gradients into `grad` and returning
    /// gradients w.r.t. `x`, `h_prev` and `c_prev`.
    pub fn step_backward(
        &self,
        p: &[f64],
        step: &LstmStep,
        dh: &[f64],
        dc: &[f64],
        grad: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let inp = self.input;
        let (w_ih, w_hh, _) = self.split(p);
        let g = &step.gates;
        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let tc = step.tanh_c[j];
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            let d_o = dh[j] * tc;
            let d_i = dct * gg;
            let d_g = dct * i;
            let d_f = dct * step.c_prev[j];
            dc_prev[j] = dct * f;
            dz[j] = d_i * i * (1.0 - i);
            dz[hd + j] = d_f * f * (1.0 - f);
            dz[2 * hd + j] = d_g * (1.0 - gg * gg);
            dz[3 * hd + j] = d_o * o * (1.0 - o);
        }
        let (gw_ih, rest) = grad.split_at_mut(4 * hd * inp);
        let (gw_hh, gb) = rest.split_at_mut(4 * hd * hd);
        let mut dx = vec![0.0; inp];
        let mut dh_prev = vec![0.0; hd];
        for r in 0..4 * hd {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            axpy(d, &step.x, &mut gw_ih[r * inp..(r + 1) * inp]);
            axpy(d, &step.h_prev, &mut gw_hh[r * hd..(r + 1) * hd]);
            gb[r] += d;
            axpy(d, &w_ih[r * inp..(r + 1) * inp], &mut dx);
            axpy(d, &w_hh[r * hd..(r + 1) * hd], &mut dh_prev);
        }
        (dx, dh_prev, dc_prev)
    }
}

/// One LSTM step: returns `(h_t, c_t)`.
pub fn lstm_cell(
    cell: &Lstm,
    params: &[f64],
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = cell.step(params, x, h_prev, c_prev)?;
    Ok((s.h, s.c))
}
