//! Component records, preprocessing, the synthetic generator, subject-level
//! folds and the dataset file format.

mod features;
mod folds;
mod io;
mod record;
mod synth;

pub use features::Features;
pub use folds::{split_folds, FoldPlan, SplitConfig};
pub use io::{Dataset, DatasetHeader, DATASET_VERSION};
pub use record::{power_spectrum, standardize, ComponentRecord, Label};
pub use synth::{
    artifact_map, artifact_timecourse, brain_mask, generate_synthetic, signal_map,
    signal_timecourse, ArtifactMap, ArtifactSeries, SynthConfig,
};
