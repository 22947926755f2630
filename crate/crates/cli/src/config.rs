use std::path::Path;

use icadenoise_core::data::{SplitConfig, SynthConfig};
use icadenoise_core::eval::VotingSchema;
use icadenoise_core::training::TrainOverrides;
use icadenoise_core::zoo::{ArchSpec, ModelId};
use icadenoise_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Everything a pipeline run depends on. Written next to every output as
/// `config.json`; feeding that file back through `--config` reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed of the cross-validation runs.
    pub seed: u64,
    pub generator: SynthConfig,
    pub split: SplitConfig,
    pub arch: ArchSpec,
    pub models: Vec<ModelId>,
    pub train: TrainOverrides,
    pub schemas: Vec<VotingSchema>,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generator: SynthConfig::default(),
            split: SplitConfig::default(),
            arch: ArchSpec::canonical(),
            models: ModelId::ALL.to_vec(),
            train: TrainOverrides::default(),
            schemas: VotingSchema::defaults(),
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(path.display().to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))
    }

    /// Sets the master, generator and split seeds at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.generator.seed = seed;
        self.split.seed = seed;
    }

    /// Applies `key=value` with a dotted key (`generator.noise_level=0.5`).
    /// The value is parsed as JSON, falling back to a plain string. Only keys
    /// that already exist can be set.
    pub fn apply_set(&mut self, assignment: &str) -> std::result::Result<(), String> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| format!("--set expects key=value, got {assignment:?}"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut root = serde_json::to_value(&*self).map_err(|e| e.to_string())?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| format!("unknown config key {key:?}"))?;
        }
        *slot = value;
        *self = serde_json::from_value(root).map_err(|e| format!("--set {assignment}: {e}"))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }
}
