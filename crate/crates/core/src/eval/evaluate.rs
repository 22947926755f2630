use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MeanMetrics, Metrics};
use super::voting::VotingSchema;
use crate::data::{Features, Label};
use crate::error::{Error, Result};
use crate::training::predict_records;
use crate::zoo::{Model, ModelId};

/// Test-set probabilities of every trained model on every fold. The test set
/// is shared by all folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPredictions {
    pub subject_ids: Vec<String>,
    pub component_ids: Vec<u32>,
    pub labels: Vec<Label>,
    pub n_folds: usize,
    /// Model -> fold -> one probability per test record.
    pub probabilities: BTreeMap<ModelId, Vec<Vec<f64>>>,
}

impl TestPredictions {
    pub fn fold(&self, model: ModelId, fold: usize) -> Result<&[f64]> {
        self.probabilities
            .get(&model)
            .and_then(|f| f.get(fold))
            .map(|v| v.as_slice())
            .ok_or_else(|| {
                Error::Evaluation(format!("no predictions for model {model}, fold {fold}"))
            })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 || self.n_folds == 0 {
            return Err(Error::Evaluation("empty test set or no folds".into()));
        }
        if self.subject_ids.len() != n || self.component_ids.len() != n {
            return Err(Error::Evaluation(
                "record identifiers do not match the labels".into(),
            ));
        }
        for (id, folds) in &self.probabilities {
            if folds.len() != self.n_folds {
                return Err(Error::Evaluation(format!(
                    "model {id}: {} folds of predictions, expected {}",
                    folds.len(),
                    self.n_folds
                )));
            }
            if let Some(k) = folds.iter().position(|p| p.len() != n) {
                return Err(Error::Evaluation(format!(
                    "model {id}, fold {k}: wrong number of predictions"
                )));
            }
        }
        Ok(())
    }
}

/// Runs every trained model over the test records. `models` holds
/// `(model, fold, network)`; each model must be present for folds
/// `0..n_folds`.
pub fn predict_test_set(
    features: &Features,
    test_records: &[usize],
    models: &[(ModelId, usize, &Model<f32>)],
    n_folds: usize,
    batch_size: usize,
) -> Result<TestPredictions> {
    let mut ids: Vec<ModelId> = models.iter().map(|m| m.0).collect();
    ids.sort();
    ids.dedup();
    let mut slots: BTreeMap<ModelId, Vec<Option<&Model<f32>>>> =
        ids.iter().map(|&id| (id, vec![None; n_folds])).collect();
    for &(id, fold, model) in models {
        if fold >= n_folds {
            return Err(Error::Evaluation(format!(
                "model {id}: fold {fold} out of range"
            )));
        }
        if model.config().id != id {
            return Err(Error::Evaluation(format!(
                "model {id}, fold {fold}: archive holds {}",
                model.config().id
            )));
        }
        slots.get_mut(&id).expect("slot per id")[fold] = Some(model);
    }
    let mut jobs = Vec::new();
    for (&id, folds) in &slots {
        for (k, m) in folds.iter().enumerate() {
            let m = m.ok_or_else(|| {
                Error::Evaluation(format!("missing archive for model {id}, fold {k}"))
            })?;
            jobs.push((id, k, m));
        }
    }
    let outputs: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(id, k, m)| {
            predict_records(m, features, test_records, batch_size)
                .map(|p| p.into_iter().map(f64::from).collect())
                .map_err(|e| e.context(format!("model {id}, fold {k}")))
        })
        .collect::<Result<_>>()?;
    let mut probabilities: BTreeMap<ModelId, Vec<Vec<f64>>> = BTreeMap::new();
    for ((id, _, _), p) in jobs.into_iter().zip(outputs) {
        probabilities.entry(id).or_default().push(p);
    }
    Ok(TestPredictions {
        subject_ids: test_records
            .iter()
            .map(|&i| features.subject_ids[i].clone())
            .collect(),
        component_ids: test_records
            .iter()
            .map(|&i| features.component_ids[i])
            .collect(),
        labels: test_records.iter().map(|&i| features.labels[i]).collect(),
        n_folds,
        probabilities,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Single,
    Combined,
    Schema,
}

/// Metrics of one model or voting schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryResult {
    pub name: String,
    pub kind: EntryKind,
    pub per_fold: Vec<Metrics>,
    pub mean: MeanMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n_folds: usize,
    pub n_test_records: usize,
    pub schemas: Vec<VotingSchema>,
    pub entries: Vec<EntryResult>,
}

impl Evaluation {
    pub fn entry(&self, name: &str) -> Option<&EntryResult> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Per-record ensemble probabilities of a schema on one fold.
pub fn schema_probabilities(
    preds: &TestPredictions,
    schema: &VotingSchema,
    fold: usize,
) -> Result<Vec<f64>> {
    let members = schema
        .models()
        .map(|id| preds.fold(id, fold))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.context(format!("schema {}", schema.name())))?;
    let mut row = vec![0.0; members.len()];
    (0..preds.labels.len())
        .map(|i| {
            for (r, m) in row.iter_mut().zip(&members) {
                *r = m[i];
            }
            schema.weighted_vote(&row).map(|(p, _)| p)
        })
        .collect()
}

/// Per-fold and fold-averaged metrics for every model with predictions and
/// for every schema.
pub fn evaluate_models(preds: &TestPredictions, schemas: &[VotingSchema]) -> Result<Evaluation> {
    preds.validate()?;
    let mut entries = Vec::new();
    let finish = |name: String, kind, per_fold: Vec<Metrics>| -> Result<EntryResult> {
        let mean = MeanMetrics::of(&per_fold)?;
        Ok(EntryResult {
            name,
            kind,
            per_fold,
            mean,
        })
    };
    for (&id, folds) in &preds.probabilities {
        let per_fold = folds
            .iter()
            .enumerate()
            .map(|(k, p)| {
                compute_metrics(p, &preds.labels)
                    .map_err(|e| e.context(format!("model {id}, fold {k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let kind = if id.is_combined() {
            EntryKind::Combined
        } else {
            EntryKind::Single
        };
        entries.push(finish(id.to_string(), kind, per_fold)?);
    }
    for schema in schemas {
        let per_fold = (0..preds.n_folds)
            .map(|k| {
                let p = schema_probabilities(preds, schema, k)?;
                compute_metrics(&p, &preds.labels)
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push(finish(
            schema.name().to_string(),
            EntryKind::Schema,
            per_fold,
        )?);
    }
    Ok(Evaluation {
        n_folds: preds.n_folds,
        n_test_records: preds.labels.len(),
        schemas: schemas.to_vec(),
        entries,
    })
}
