//! Network definitions: single-domain spatial, temporal and frequency models,
//! their fused combinations, and the builder that instantiates parameters.

mod config;
mod model;

pub use config::{
    combine_models, ArchSpec, BranchConfig, Domain, InputDims, ModelConfig, ModelId, Stage,
};
pub use model::{LayerShape, Model, ModelInput, ModelPlan};
