//! Classification of ICA components of resting-state fMRI as neuronal signal
//! or artifact.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors and a define-by-run reverse-mode tape with the
//!   layer vocabulary the networks need (3-D/1-D convolution, max pooling,
//!   dense, batch norm, dropout, LSTM, activations, concatenation, BCE loss).
//! * [`optim`]: Adam and the early-stopping controller.
//! * [`zoo`]: the seven single-domain networks, the four fused networks and
//!   their builders.
//! * [`data`]: component records, standardization, periodograms, the
//!   synthetic component generator, subject-level folds and dataset files.
//! * [`training`]: per-fold training and the cross-validation harness.
//! * [`eval`]: confusion metrics, weighted soft voting and report emission.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used for training.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Graph, Mode, ParamStore, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;

pub type Model32 = zoo::Model<f32>;
pub type Model64 = zoo::Model<f64>;
