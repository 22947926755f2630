use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::run::{run_training, RunResult, TrainConfig, TrainedModel};
use crate::data::{Features, FoldPlan};
use crate::error::{Error, Result};
use crate::zoo::{ArchSpec, ModelConfig, ModelId};

/// Optional replacements for the per-model training defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub eval_batch_size: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.eval_batch_size {
            cfg.eval_batch_size = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub arch: ArchSpec,
    pub master_seed: u64,
    pub train: TrainOverrides,
    /// Worker threads for concurrent runs.
    pub jobs: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            arch: ArchSpec::canonical(),
            master_seed: 0,
            train: TrainOverrides::default(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub run: RunResult,
    /// Hex SHA-256 of the archive bytes.
    pub archive_sha256: String,
}

/// Ties every archive to its model and fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvManifest {
    pub master_seed: u64,
    pub arch: ArchSpec,
    pub folds: Vec<FoldPlan>,
    pub runs: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub manifest: CvManifest,
    /// Same order as `manifest.runs`: model-major, then fold.
    pub models: Vec<TrainedModel>,
}

/// Seed of one training run, mixed from the master seed, model and fold.
pub fn run_seed(master: u64, model: ModelId, fold: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(model.name().as_bytes());
    h.update((fold as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Hex SHA-256 recorded for each archive in the manifest.
pub fn archive_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Trains every model on every fold. When `out_dir` is given, archives are
/// written to `models/<id>/fold<k>/model.icap` beneath it, next to a
/// `run.json`, and the manifest to `models/manifest.json`. `progress` is
/// called after each run finishes.
pub fn run_cv(
    features: &Features,
    folds: &[FoldPlan],
    model_ids: &[ModelId],
    cfg: &CvConfig,
    out_dir: Option<&Path>,
    progress: &(dyn Fn(&RunResult) + Sync),
) -> Result<CvOutcome> {
    if model_ids.is_empty() || folds.is_empty() {
        return Err(Error::Config(
            "nothing to train: no models or no folds".into(),
        ));
    }
    let tasks: Vec<(ModelId, &FoldPlan)> = model_ids
        .iter()
        .flat_map(|&id| folds.iter().map(move |f| (id, f)))
        .collect();
    let one = |(id, fold): (ModelId, &FoldPlan)| -> Result<(ManifestEntry, TrainedModel)> {
        let annotate = |e: Error| e.context(format!("model {id}, fold {}", fold.fold_index));
        let config = ModelConfig::build_config(id, features.dims, &cfg.arch).map_err(annotate)?;
        let train = cfg.train.apply(TrainConfig::for_model(
            id,
            run_seed(cfg.master_seed, id, fold.fold_index),
        ));
        let mut trained = run_training(features, fold, &config, &train).map_err(annotate)?;
        let bytes = trained.model.to_archive().map_err(annotate)?;
        if let Some(dir) = out_dir {
            let rel = format!("models/{id}/fold{}", fold.fold_index);
            let run_dir = dir.join(&rel);
            std::fs::create_dir_all(&run_dir).map_err(|e| annotate(e.into()))?;
            std::fs::write(run_dir.join("model.icap"), &bytes).map_err(|e| annotate(e.into()))?;
            trained.result.archive = Some(format!("{rel}/model.icap"));
            let json =
                serde_json::to_vec_pretty(&trained.result).map_err(|e| annotate(e.into()))?;
            std::fs::write(run_dir.join("run.json"), json).map_err(|e| annotate(e.into()))?;
        }
        progress(&trained.result);
        Ok((
            ManifestEntry {
                run: trained.result.clone(),
                archive_sha256: archive_digest(&bytes),
            },
            trained,
        ))
    };
    let results: Vec<(ManifestEntry, TrainedModel)> = if cfg.jobs <= 1 {
        tasks.into_iter().map(one).collect::<Result<_>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| tasks.into_par_iter().map(one).collect::<Result<_>>())?
    };
    let (runs, models) = results.into_iter().unzip();
    let manifest = CvManifest {
        master_seed: cfg.master_seed,
        arch: cfg.arch.clone(),
        folds: folds.to_vec(),
        runs,
    };
    if let Some(dir) = out_dir {
        let path = dir.join("models/manifest.json");
        std::fs::create_dir_all(dir.join("models"))?;
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    }
    Ok(CvOutcome { manifest, models })
}
