//! Continuous spatio-temporal forecasting with nested graph ODEs.
//!
//! The encoder integrates a temporal ODE whose vector field is a gated,
//! dilated convolution; inside every evaluation of that field a second ODE
//! diffuses the latent states over a learned, uni-directional graph. Both
//! integrals are solved with fixed-step Euler or RK4 and differentiated by
//! backpropagating through the unrolled steps.
//!
//! Layout:
//! - [`tensor`], [`autodiff`]: dense tensors and the reverse-mode tape
//! - [`ode`]: fixed-step integrators
//! - [`graph`]: graph learner, normalisation, graph diffusion field, heat-kernel oracle
//! - [`temporal`]: gated dilated convolution, padding, receptive-field arithmetic
//! - [`model`]: the full encoder/decoder and its ablation variants
//! - [`train`]: Adam, learning-rate schedule and the training loop
//! - [`data`], [`metrics`]: series ingestion, windows, scalers, evaluation
//! - [`reference`], [`verify`]: plain-array oracles and the verification harness

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod ode;
pub mod reference;
pub mod temporal;
pub mod tensor;
pub mod train;
pub mod verify;

#[cfg(test)]
mod testutil;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use model::{Ablation, Mode, Model, ModelConfig};

pub use ode::{Method, SolverSpec};
pub use tensor::Tensor;
