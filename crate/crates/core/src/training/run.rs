use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Features, FoldPlan};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState, EarlyStopping, StopDecision};
use crate::tensor::{Graph, Mode};
use crate::zoo::{Model, ModelConfig, ModelId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Batch size for validation and test inference; does not affect results.
    pub eval_batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Spatial-only models train with batch 16 and patience 3, every other
    /// model with batch 128 and patience 4.
    pub fn for_model(id: ModelId, seed: u64) -> Self {
        let spatial = id.is_spatial_only();
        Self {
            learning_rate: 1e-3,
            batch_size: if spatial { 16 } else { 128 },
            patience: if spatial { 3 } else { 4 },
            max_epochs: 50,
            eval_batch_size: if spatial { 64 } else { 256 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0
            || self.eval_batch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
        {
            return Err(Error::Config(
                "batch sizes, patience and epoch cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-record BCE over the epoch's batches.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model_id: ModelId,
    pub fold_index: usize,
    /// Archive path relative to the results directory, when one was written.
    pub archive: Option<String>,
    pub config: TrainConfig,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_accuracy: f64,
    /// Validation accuracy re-measured after restoring the best snapshot.
    pub restored_val_accuracy: f64,
    pub n_train_records: usize,
    pub batches_per_epoch: usize,
    /// Distinct records read during training and early stopping.
    pub records_visited: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub result: RunResult,
    pub model: Model<f32>,
}

/// Eval-mode probabilities for the given records, in order.
pub fn predict_records(
    model: &Model<f32>,
    features: &Features,
    records: &[usize],
    batch_size: usize,
) -> Result<Vec<f32>> {
    let domains = model.config().domains();
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        out.extend(model.predict(&features.batch::<f32>(chunk, &domains))?);
    }
    Ok(out)
}

/// Fraction of records whose thresholded prediction (`p > 0.5` is artifact)
/// matches the label.
pub fn accuracy(
    model: &Model<f32>,
    features: &Features,
    records: &[usize],
    batch_size: usize,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Protocol("accuracy over an empty record set".into()));
    }
    let p = predict_records(model, features, records, batch_size)?;
    let correct = p
        .iter()
        .zip(records)
        .filter(|(&p, &i)| (p > 0.5) == features.labels[i].is_artifact())
        .count();
    Ok(correct as f64 / records.len() as f64)
}

/// Record indices read while training, checked against the fold's test set.
struct Audit<'a> {
    forbidden: HashSet<usize>,
    visited: HashSet<usize>,
    fold: &'a FoldPlan,
}

impl<'a> Audit<'a> {
    fn new(fold: &'a FoldPlan) -> Result<Self> {
        let audit = Self {
            forbidden: fold.test_records.iter().copied().collect(),
            visited: HashSet::new(),
            fold,
        };
        audit.check(&fold.balanced_train_records)?;
        audit.check(&fold.val_records)?;
        Ok(audit)
    }

    fn check(&self, records: &[usize]) -> Result<()> {
        match records.iter().find(|i| self.forbidden.contains(i)) {
            Some(i) => Err(Error::Protocol(format!(
                "fold {}: test record {i} reached training",
                self.fold.fold_index
            ))),
            None => Ok(()),
        }
    }

    fn visit(&mut self, records: &[usize]) -> Result<()> {
        self.check(records)?;
        self.visited.extend(records);
        Ok(())
    }
}

/// Trains one model on one fold: shuffled balanced batches (reshuffled each
/// epoch from the run seed), Adam, early stopping on validation accuracy,
/// then the best snapshot is restored.
pub fn run_training(
    features: &Features,
    fold: &FoldPlan,
    config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if fold.balanced_train_records.is_empty() {
        return Err(Error::Protocol(format!(
            "fold {}: empty balanced training set",
            fold.fold_index
        )));
    }
    if fold.val_records.is_empty() {
        return Err(Error::Protocol(format!(
            "fold {}: empty validation set",
            fold.fold_index
        )));
    }
    if config.input != features.dims {
        return Err(Error::Config(format!(
            "{} expects inputs {:?}, dataset provides {:?}",
            config.id, config.input, features.dims
        )));
    }
    let mut audit = Audit::new(fold)?;
    let domains = config.domains();
    let mut model = Model::<f32>::build(config.clone(), cfg.seed)?;
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut epochs = Vec::new();
    let mut order = fold.balanced_train_records.clone();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            audit.visit(chunk)?;
            let input = features.batch::<f32>(chunk, &domains);
            let targets = features.targets::<f32>(chunk);
            let mut g = Graph::new();
            let p = model.forward(&mut g, &input, Mode::Train, &mut rng)?;
            let loss = g.bce(p, &targets)?;
            loss_sum += g.value(loss).data()[0] as f64 * chunk.len() as f64;
            g.backward(loss)?;
            model.params_mut().zero_grads();
            g.accumulate_param_grads(model.params_mut());
            adam.step(model.params_mut())?;
        }
        audit.visit(&fold.val_records)?;
        let val_accuracy = accuracy(&model, features, &fold.val_records, cfg.eval_batch_size)?;
        epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_accuracy,
        });
        if stopper.step(val_accuracy, || Ok::<_, Error>(model.params().clone()))?
            == StopDecision::Stop
        {
            break;
        }
    }
    let best_val_accuracy = stopper.best_metric().expect("at least one epoch ran");
    let best_epoch = stopper.best_epoch();
    let snapshot = stopper
        .into_best_snapshot()
        .expect("best epoch has a snapshot");
    model.params_mut().copy_values_from(&snapshot)?;
    let restored_val_accuracy = accuracy(&model, features, &fold.val_records, cfg.eval_batch_size)?;
    if (restored_val_accuracy - best_val_accuracy).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "restored snapshot scores {restored_val_accuracy}, best epoch scored {best_val_accuracy}"
        )));
    }
    Ok(TrainedModel {
        result: RunResult {
            model_id: config.id,
            fold_index: fold.fold_index,
            archive: None,
            config: cfg.clone(),
            stopped_epoch: epochs.len(),
            epochs,
            best_epoch,
            best_val_accuracy,
            restored_val_accuracy,
            n_train_records: order.len(),
            batches_per_epoch: order.len().div_ceil(cfg.batch_size),
            records_visited: audit.visited.len(),
        },
        model,
    })
}
