use serde::{Deserialize, Serialize};

use super::params::ParameterVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: ParameterVector,
    v: ParameterVector,
    t: u64,
}

impl AdamState {
    pub fn new(like: &ParameterVector) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut ParameterVector, grad: &ParameterVector, hp: &AdamParams) -> Result<()> {
        if !self.m.same_layout(params) || !params.same_layout(grad) {
            return Err(Error::Shape("adam: moment, parameter and gradient layouts differ".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        let m = self.m.values_mut();
        let v = self.v.values_mut();
        for (((p, &g), mi), vi) in params
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * g;
            *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    state: &AdamState,
    params: &ParameterVector,
    grad: &ParameterVector,
    hp: &AdamParams,
) -> Result<(ParameterVector, AdamState)> {
    let mut state = state.clone();
    let mut params = params.clone();
    state.step(&mut params, grad, hp)?;
    Ok((params, state))
}
