//! Per-fold training with early stopping, and the cross-validation harness.

mod cv;
mod run;

pub use cv::{
    archive_digest, run_cv, run_seed, CvConfig, CvManifest, CvOutcome, ManifestEntry,
    TrainOverrides,
};
pub use run::{
    accuracy, predict_records, run_training, EpochLog, RunResult, TrainConfig, TrainedModel,
};
