//! Small differentiable kernel: dense tensors, flat parameter vectors, a
//! fully connected classifier, an LSTM cell, optimizers and seeded streams.
//!
//! Only the fixed MLP and LSTM topologies are differentiated, by hand.

mod lstm;
mod mlp;
mod optim;
mod params;
mod rng;
mod tensor;

pub use lstm::{lstm_cell, Lstm, LstmStep};
pub use mlp::{Activation, MlpModel};
pub use optim::{adam_step, AdamParams, AdamState};
pub use params::{grad_l2_norm, layout_hash, sgd_step, NamedTensor, ParameterVector, Segment};
pub use rng::{RngStream, StreamRng};
pub use tensor::Tensor2;

pub(crate) use mlp::argmax;
pub(crate) use tensor::{axpy, dot};
