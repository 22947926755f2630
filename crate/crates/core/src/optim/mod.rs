//! Optimizer and early-stopping control for the training loops.

mod adam;
mod early_stop;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use early_stop::{EarlyStopping, StopDecision};
