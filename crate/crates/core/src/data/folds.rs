use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{ComponentRecord, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub n_train_subjects: usize,
    pub n_val_subjects: usize,
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            n_train_subjects: 80,
            n_val_subjects: 20,
            n_folds: 5,
            seed: 0,
        }
    }
}

/// Subject partition and record selection for one fold. Record references
/// are indices into the dataset the plan was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_index: usize,
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub balanced_train_records: Vec<usize>,
    pub val_records: Vec<usize>,
    pub test_records: Vec<usize>,
}

impl FoldPlan {
    /// Seed used for this fold's balancing and training draws.
    pub fn fold_seed(master: u64, fold: usize) -> u64 {
        master ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1))
    }
}

/// Subject-level folds. The subjects are shuffled once with `seed`; the first
/// `n_train + n_val` form the cross-validation pool and the rest the test set,
/// shared by every fold. Fold `k` validates on the `k`-th window of `n_val`
/// pool subjects (wrapping) and trains on the remainder, so that with the
/// default sizes every pool subject is validated exactly once. Training
/// records are balanced by undersampling the majority class.
pub fn split_folds(records: &[ComponentRecord], config: &SplitConfig) -> Result<Vec<FoldPlan>> {
    let (n_train, n_val) = (config.n_train_subjects, config.n_val_subjects);
    if n_train == 0 || n_val == 0 || config.n_folds == 0 {
        return Err(Error::Partition(
            "train, validation and fold counts must be positive".into(),
        ));
    }
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_subject.entry(r.subject_id.as_str()).or_default().push(i);
    }
    let mut subjects: Vec<&str> = by_subject.keys().copied().collect();
    if subjects.len() <= n_train + n_val {
        return Err(Error::Partition(format!(
            "{} subjects cannot fill {n_train} train + {n_val} validation subjects and a test set",
            subjects.len()
        )));
    }
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let pool = &subjects[..n_train + n_val];
    let mut test: Vec<&str> = subjects[n_train + n_val..].to_vec();
    test.sort_unstable();
    let gather = |subs: &[&str]| -> Vec<usize> {
        let mut idx: Vec<usize> = subs
            .iter()
            .flat_map(|s| by_subject[s].iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    };
    let test_records = gather(&test);

    (0..config.n_folds)
        .map(|k| {
            let val_set: BTreeSet<&str> = (0..n_val)
                .map(|j| pool[(k * n_val + j) % pool.len()])
                .collect();
            let mut train: Vec<&str> = pool
                .iter()
                .copied()
                .filter(|s| !val_set.contains(s))
                .collect();
            train.sort_unstable();
            let val: Vec<&str> = val_set.into_iter().collect();

            let candidates = gather(&train);
            let (mut art, mut sig): (Vec<usize>, Vec<usize>) = candidates
                .iter()
                .partition(|&&i| records[i].label == Label::Artifact);
            let keep = art.len().min(sig.len());
            if keep == 0 {
                return Err(Error::Partition(format!(
                    "fold {k}: training subjects lack one of the classes"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(FoldPlan::fold_seed(config.seed, k));
            let majority = if art.len() > sig.len() {
                &mut art
            } else {
                &mut sig
            };
            majority.shuffle(&mut rng);
            majority.truncate(keep);
            let mut balanced: Vec<usize> = art.into_iter().chain(sig).collect();
            balanced.sort_unstable();

            let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
            Ok(FoldPlan {
                fold_index: k,
                train_subjects: owned(&train),
                val_subjects: owned(&val),
                test_subjects: owned(&test),
                balanced_train_records: balanced,
                val_records: gather(&val),
                test_records: test_records.clone(),
            })
        })
        .collect()
}
