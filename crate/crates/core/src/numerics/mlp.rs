use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParameterVector, Segment};
use super::rng::RngStream;
use super::tensor::{axpy, dot, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected classifier. Layer `l` maps `dims[l]` to `dims[l + 1]` and
/// is followed by `activations[l]`; the last layer emits class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    params: ParameterVector,
}

pub(crate) fn weight_name(layer: usize) -> String {
    format!("layer{layer}.weight")
}

pub(crate) fn bias_name(layer: usize) -> String {
    format!("layer{layer}.bias")
}

fn mlp_layout(dims: &[usize]) -> Vec<Segment> {
    let mut layout = Vec::new();
    for l in 0..dims.len() - 1 {
        layout.push(Segment::new(weight_name(l), &[dims[l + 1], dims[l]]));
        layout.push(Segment::new(bias_name(l), &[dims[l + 1]]));
    }
    layout
}

impl MlpModel {
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Validation("an MLP needs at least input and output widths".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Validation("layer widths must be positive".into()));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::Validation(format!(
                "{} activations given for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            activations: activations.to_vec(),
            params: ParameterVector::zeros(mlp_layout(dims)),
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: &[usize], activations: &[Activation], stream: RngStream) -> Result<Self> {
        let mut model = Self::zeros(dims, activations)?;
        let mut rng = stream.rng();
        for l in 0..dims.len() - 1 {
            let limit = (6.0 / (dims[l] + dims[l + 1]) as f64).sqrt();
            let w = model.params.segment_mut(&weight_name(l)).expect("layout");
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    /// Same architecture with different parameters.
    pub fn with_params(&self, params: ParameterVector) -> Result<Self> {
        self.params.ensure_same_layout(&params)?;
        Ok(Self {
            dims: self.dims.clone(),
            activations: self.activations.clone(),
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    pub fn into_params(self) -> ParameterVector {
        self.params
    }

    /// Name of the output layer's bias segment.
    pub fn output_bias_name(&self) -> String {
        bias_name(self.num_layers() - 1)
    }

    fn check_input(&self, batch: &Tensor2) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Activations of every layer for the given rows; entry 0 is the input.
    fn activations_for(&self, batch: &Tensor2, rows: &[usize]) -> Vec<Vec<f64>> {
        let n = rows.len();
        let mut acts = Vec::with_capacity(self.dims.len());
        let mut input = Vec::with_capacity(n * self.input_dim());
        for &r in rows {
            input.extend_from_slice(batch.row(r));
        }
        acts.push(input);
        let values = self.params.values();
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let w = &values[offset..offset + din * dout];
            let b = &values[offset + din * dout..offset + din * dout + dout];
            offset += din * dout + dout;
            let act = self.activations[l];
            let prev = &acts[l];
            let mut out = vec![0.0; n * dout];
            for i in 0..n {
                let x = &prev[i * din..(i + 1) * din];
                let y = &mut out[i * dout..(i + 1) * dout];
                for o in 0..dout {
                    y[o] = act.apply(b[o] + dot(&w[o * din..(o + 1) * din], x));
                }
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, batch: &Tensor2) -> Result<Tensor2> {
        self.check_input(batch)?;
        let rows: Vec<usize> = (0..batch.rows()).collect();
        let mut acts = self.activations_for(batch, &rows);
        Tensor2::new(batch.rows(), self.classes(), acts.pop().unwrap())
    }

    pub fn predict(&self, batch: &Tensor2) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    /// Mean softmax cross-entropy (nats) and its gradient.
    pub fn loss_and_grad(&self, batch: &Tensor2, labels: &[usize]) -> Result<(f64, ParameterVector)> {
        self.check_input(batch)?;
        if labels.len() != batch.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                batch.rows()
            )));
        }
        self.check_labels(labels)?;
        let rows: Vec<usize> = (0..batch.rows()).collect();
        let mut grad = self.params.zeros_like();
        let loss = self.accumulate_grad(batch, labels, &rows, grad.values_mut());
        Ok((loss, grad))
    }

    pub(crate) fn check_labels(&self, labels: &[usize]) -> Result<()> {
        let c = self.classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Validation(format!("label {bad} outside [0, {c})")));
        }
        Ok(())
    }

    /// Mean cross-entropy over `rows` of `features` (labels indexed by the
    /// same row numbers); the mean gradient is added into `grad`.
    pub(crate) fn accumulate_grad(
        &self,
        features: &Tensor2,
        labels: &[usize],
        rows: &[usize],
        grad: &mut [f64],
    ) -> f64 {
        let n = rows.len();
        if n == 0 {
            return 0.0;
        }
        let acts = self.activations_for(features, rows);
        let c = self.classes();
        let inv_n = 1.0 / n as f64;

        // Softmax cross-entropy at the output.
        let logits = &acts[self.num_layers()];
        let mut delta = vec![0.0; n * c];
        let mut loss = 0.0;
        for (i, &r) in rows.iter().enumerate() {
            let z = &logits[i * c..(i + 1) * c];
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            let y = labels[r];
            loss += lse - z[y];
            let d = &mut delta[i * c..(i + 1) * c];
            for k in 0..c {
                d[k] = (z[k] - lse).exp() * inv_n;
            }
            d[y] -= inv_n;
        }
        // The output activation is part of the logit map.
        let out_act = self.activations[self.num_layers() - 1];
        if out_act != Activation::Identity {
            for (d, &a) in delta.iter_mut().zip(logits) {
                *d *= out_act.derivative_from_output(a);
            }
        }

        let values = self.params.values();
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut offset = 0;
        for l in 0..self.num_layers() {
            offsets.push(offset);
            offset += self.dims[l] * self.dims[l + 1] + self.dims[l + 1];
        }
        for l in (0..self.num_layers()).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let off = offsets[l];
            let prev = &acts[l];
            {
                let (gw, gb) = grad[off..off + din * dout + dout].split_at_mut(din * dout);
                for i in 0..n {
                    let x = &prev[i * din..(i + 1) * din];
                    let d = &delta[i * dout..(i + 1) * dout];
                    for o in 0..dout {
                        if d[o] != 0.0 {
                            axpy(d[o], x, &mut gw[o * din..(o + 1) * din]);
                            gb[o] += d[o];
                        }
                    }
                }
            }
            if l > 0 {
                let w = &values[off..off + din * dout];
                let act = self.activations[l - 1];
                let mut next = vec![0.0; n * din];
                for i in 0..n {
                    let d = &delta[i * dout..(i + 1) * dout];
                    let da = &mut next[i * din..(i + 1) * din];
                    for o in 0..dout {
                        if d[o] != 0.0 {
                            axpy(d[o], &w[o * din..(o + 1) * din], da);
                        }
                    }
                    let a = &prev[i * din..(i + 1) * din];
                    for (g, &av) in da.iter_mut().zip(a) {
                        *g *= act.derivative_from_output(av);
                    }
                }
                delta = next;
            }
        }
        loss * inv_n
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
