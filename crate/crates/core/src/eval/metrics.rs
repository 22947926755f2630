use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Decision threshold: a component is an artifact when its probability is
/// strictly above this value.
pub const THRESHOLD: f64 = 0.5;

/// Confusion counts and the ratios derived from them, artifact positive.
/// A ratio whose denominator is zero is `None` (serialized as `null`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub acc: Option<f64>,
    pub prec: Option<f64>,
    pub sen: Option<f64>,
    pub spec: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Self {
            tp,
            fp,
            tn,
            fn_,
            acc: ratio(tp + tn, tp + tn + fp + fn_),
            prec: ratio(tp, tp + fp),
            sen: ratio(tp, tp + fn_),
            spec: ratio(tn, tn + fp),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Artifact count in the ground truth.
    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }
}

/// Thresholds the probabilities and counts the confusion matrix.
pub fn compute_metrics(probabilities: &[f64], labels: &[Label]) -> Result<Metrics> {
    if probabilities.is_empty() {
        return Err(Error::Contract("metrics over an empty record set".into()));
    }
    if probabilities.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &label) in probabilities.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Contract(format!("probability {p} outside [0, 1]")));
        }
        match (p > THRESHOLD, label.is_artifact()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}

/// Arithmetic mean of per-fold ratios. A ratio is undefined in the summary
/// when it is undefined in any fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub acc: Option<f64>,
    pub prec: Option<f64>,
    pub sen: Option<f64>,
    pub spec: Option<f64>,
}

impl MeanMetrics {
    pub fn of(folds: &[Metrics]) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Evaluation("no folds to average".into()));
        }
        let mean = |f: fn(&Metrics) -> Option<f64>| -> Option<f64> {
            let vals: Option<Vec<f64>> = folds.iter().map(f).collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        Ok(Self {
            acc: mean(|m| m.acc),
            prec: mean(|m| m.prec),
            sen: mean(|m| m.sen),
            spec: mean(|m| m.spec),
        })
    }
}
