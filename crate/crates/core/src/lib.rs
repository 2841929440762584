//! Simulation of a label distribution inference attack on federated
//! learning: an honest-but-curious server estimates a victim's dataset size
//! from update norms, trains a matched cluster of virtual clients, and
//! infers the victim's label proportions from per-class accuracy over
//! rounds.

pub mod attacker;
pub mod datasets;
pub mod error;
pub mod flsim;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod sizeest;
pub mod vclients;

pub use datasets::{Dataset, LabelDistribution, Regime};
pub use error::{Error, Result};
pub use numerics::{MlpModel, ParameterVector, RngStream, Tensor2};
pub use vclients::{TemporalMatrix, VirtualClientSpec};
