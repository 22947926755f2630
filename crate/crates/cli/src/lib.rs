//! The `icadenoise` pipeline: dataset generation, cross-validated training,
//! evaluation with soft voting, and report files.

mod cli;
pub mod config;
pub mod pipeline;

pub use cli::run;
pub use config::RunConfig;
