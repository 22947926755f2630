use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use icadenoise_core::data::{split_folds, Dataset, Features, FoldPlan};
use icadenoise_core::eval::{
    emit_report, evaluate_models, predict_test_set, schema_probabilities, Evaluation,
    TestPredictions, VotingSchema,
};
use icadenoise_core::training::{archive_digest, run_cv, CvConfig, CvManifest, RunResult};
use icadenoise_core::zoo::{Model, ModelId};
use icadenoise_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const DATASET_FILE: &str = "dataset.icad";
pub const CONFIG_FILE: &str = "config.json";
pub const INPUTS_FILE: &str = "inputs.json";
pub const MANIFEST_FILE: &str = "models/manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const VOTES_FILE: &str = "votes.json";

/// Which command produced a directory, and from what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub command: String,
    pub files: BTreeMap<String, String>,
    pub dataset_sha256: Option<String>,
}

fn annotate_path(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| e.context(path.display().to_string())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    std::fs::write(path, bytes).map_err(|e| annotate_path(path)(e.into()))
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(|e| annotate_path(path)(e.into()))?;
    serde_json::from_str(&text).map_err(|e| annotate_path(path)(e.into()))
}

fn snapshot(out: &Path, cfg: &RunConfig, inputs: &Inputs) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| annotate_path(out)(e.into()))?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    write_json(&out.join(INPUTS_FILE), inputs)
}

fn inputs(command: &str, files: &[(&str, &Path)], dataset_sha256: Option<String>) -> Inputs {
    Inputs {
        command: command.to_string(),
        files: files
            .iter()
            .map(|(k, p)| (k.to_string(), p.display().to_string()))
            .collect(),
        dataset_sha256,
    }
}

/// Generates the synthetic dataset into `out/dataset.icad`.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let ds = Dataset::generate(&cfg.generator)?;
    let path = out.join(DATASET_FILE);
    snapshot(out, cfg, &inputs("generate", &[], Some(ds.hash()?)))?;
    ds.write(&path).map_err(annotate_path(&path))?;
    Ok(path)
}

struct Loaded {
    features: Features,
    folds: Vec<FoldPlan>,
    sha256: String,
}

fn load(cfg: &RunConfig, data: &Path) -> Result<Loaded> {
    let ds = Dataset::read(data).map_err(annotate_path(data))?;
    let sha256 = ds.hash()?;
    let folds = split_folds(&ds.records, &cfg.split)?;
    Ok(Loaded {
        features: Features::from_dataset(ds)?,
        folds,
        sha256,
    })
}

fn log_run(r: &RunResult) {
    eprintln!(
        "{} fold {}: best epoch {} (val acc {:.4}), stopped after {}",
        r.model_id, r.fold_index, r.best_epoch, r.best_val_accuracy, r.stopped_epoch
    );
}

/// Cross-validated training of `cfg.models`; archives and the manifest go
/// under `out/models`.
pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<CvManifest> {
    cfg.validate()?;
    let loaded = load(cfg, data)?;
    snapshot(
        out,
        cfg,
        &inputs("train", &[("data", data)], Some(loaded.sha256)),
    )?;
    let cv = CvConfig {
        arch: cfg.arch.clone(),
        master_seed: cfg.seed,
        train: cfg.train.clone(),
        jobs: cfg.jobs,
    };
    Ok(run_cv(
        &loaded.features,
        &loaded.folds,
        &cfg.models,
        &cv,
        Some(out),
        &log_run,
    )?
    .manifest)
}

/// Schemas whose models all have predictions. With `strict` a schema that
/// references a missing model is an error instead of being skipped.
fn usable_schemas(
    schemas: &[VotingSchema],
    preds: &TestPredictions,
    strict: bool,
) -> Result<Vec<VotingSchema>> {
    let mut out = Vec::new();
    for s in schemas {
        match s.models().find(|id| !preds.probabilities.contains_key(id)) {
            None => out.push(s.clone()),
            Some(id) if strict => {
                return Err(Error::Evaluation(format!(
                    "schema {} needs model {id}, which was not trained",
                    s.name()
                )))
            }
            Some(id) => eprintln!("skipping {}: no predictions for {id}", s.name()),
        }
    }
    Ok(out)
}

/// What `evaluate` should cover.
#[derive(Debug, Clone, Default)]
pub struct EvalSelection {
    /// Models to evaluate; `None` means every model in the manifest.
    pub models: Option<Vec<ModelId>>,
    /// Fail when a schema references an untrained model instead of skipping it.
    pub strict_schemas: bool,
}

/// Runs the archived models from a `train` directory over the shared test
/// set and scores models and schemas. Writes `predictions.json` and
/// `evaluation.json` into `out`.
pub fn evaluate(
    cfg: &RunConfig,
    data: &Path,
    runs: &Path,
    out: &Path,
    sel: &EvalSelection,
) -> Result<Evaluation> {
    let trained: Inputs = read_json(&runs.join(INPUTS_FILE))?;
    let manifest: CvManifest = read_json(&runs.join(MANIFEST_FILE))?;
    let ds = Dataset::read(data).map_err(annotate_path(data))?;
    let sha256 = ds.hash()?;
    if trained.dataset_sha256.as_deref() != Some(sha256.as_str()) {
        return Err(Error::Evaluation(format!(
            "{} was trained on a different dataset than {}",
            runs.display(),
            data.display()
        )));
    }
    let features = Features::from_dataset(ds)?;
    let test = &manifest
        .folds
        .first()
        .ok_or_else(|| Error::Evaluation("manifest lists no folds".into()))?
        .test_records;
    if manifest.folds.iter().any(|f| &f.test_records != test) {
        return Err(Error::Evaluation("folds disagree on the test set".into()));
    }
    let wanted: Vec<ModelId> = match &sel.models {
        Some(m) => m.clone(),
        None => {
            let mut m: Vec<ModelId> = manifest.runs.iter().map(|r| r.run.model_id).collect();
            m.sort();
            m.dedup();
            m
        }
    };
    let mut models = Vec::new();
    for &id in &wanted {
        for fold in &manifest.folds {
            let k = fold.fold_index;
            let entry = manifest
                .runs
                .iter()
                .find(|r| r.run.model_id == id && r.run.fold_index == k)
                .ok_or_else(|| {
                    Error::Evaluation(format!("missing archive for model {id}, fold {k}"))
                })?;
            let rel = entry.run.archive.as_ref().ok_or_else(|| {
                Error::Evaluation(format!(
                    "model {id}, fold {k}: manifest has no archive path"
                ))
            })?;
            let path = runs.join(rel);
            let bytes = std::fs::read(&path).map_err(|e| {
                Error::Evaluation(format!(
                    "missing archive for model {id}, fold {k}: {}: {e}",
                    path.display()
                ))
            })?;
            if archive_digest(&bytes) != entry.archive_sha256 {
                return Err(Error::Evaluation(format!(
                    "model {id}, fold {k}: archive {} does not match the manifest digest",
                    path.display()
                )));
            }
            let model = Model::<f32>::from_archive(&bytes).map_err(annotate_path(&path))?;
            models.push((id, k, model));
        }
    }
    let refs: Vec<(ModelId, usize, &Model<f32>)> =
        models.iter().map(|(id, k, m)| (*id, *k, m)).collect();
    let batch = cfg.train.eval_batch_size.unwrap_or(64);
    let preds = predict_test_set(&features, test, &refs, manifest.folds.len(), batch)?;
    let schemas = usable_schemas(&cfg.schemas, &preds, sel.strict_schemas)?;
    let evaluation = evaluate_models(&preds, &schemas)?;
    snapshot(
        out,
        cfg,
        &inputs("evaluate", &[("data", data), ("runs", runs)], Some(sha256)),
    )?;
    write_json(&out.join(PREDICTIONS_FILE), &preds)?;
    write_json(&out.join(EVALUATION_FILE), &evaluation)?;
    Ok(evaluation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaVotes {
    pub schema: VotingSchema,
    /// Fold -> combined probability per test record.
    pub probabilities: Vec<Vec<f64>>,
    /// Fold -> `true` where the record is voted an artifact.
    pub artifact: Vec<Vec<bool>>,
}

/// Applies voting schemas to saved predictions. Writes `votes.json` and an
/// `evaluation.json` covering the models and the schemas.
pub fn vote(cfg: &RunConfig, predictions: &Path, out: &Path) -> Result<Vec<SchemaVotes>> {
    let preds: TestPredictions = read_json(predictions)?;
    preds.validate()?;
    let mut votes = Vec::new();
    for schema in &cfg.schemas {
        let probabilities = (0..preds.n_folds)
            .map(|k| schema_probabilities(&preds, schema, k))
            .collect::<Result<Vec<_>>>()?;
        let artifact = probabilities
            .iter()
            .map(|p| {
                p.iter()
                    .map(|&p| p > icadenoise_core::eval::THRESHOLD)
                    .collect()
            })
            .collect();
        votes.push(SchemaVotes {
            schema: schema.clone(),
            probabilities,
            artifact,
        });
    }
    let evaluation = evaluate_models(&preds, &cfg.schemas)?;
    snapshot(
        out,
        cfg,
        &inputs("vote", &[("predictions", predictions)], None),
    )?;
    write_json(&out.join(VOTES_FILE), &votes)?;
    write_json(&out.join(EVALUATION_FILE), &evaluation)?;
    Ok(votes)
}

/// Renders an `evaluation.json` into report files.
pub fn report(evaluation: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let e: Evaluation = read_json(evaluation)?;
    std::fs::create_dir_all(out).map_err(|e| annotate_path(out)(e.into()))?;
    write_json(
        &out.join(INPUTS_FILE),
        &inputs("report", &[("evaluation", evaluation)], None),
    )?;
    emit_report(&e, out)
}

/// Generation, training, evaluation and report in one go, laid out as
/// `out/{data,train,eval,report}`.
pub fn full_run(cfg: &RunConfig, out: &Path) -> Result<Evaluation> {
    cfg.validate()?;
    snapshot(out, cfg, &inputs("full-run", &[], None))?;
    let data = generate(cfg, &out.join("data"))?;
    train(cfg, &data, &out.join("train"))?;
    let evaluation = evaluate(
        cfg,
        &data,
        &out.join("train"),
        &out.join("eval"),
        &EvalSelection {
            models: Some(cfg.models.clone()),
            strict_schemas: false,
        },
    )?;
    report(&out.join("eval").join(EVALUATION_FILE), &out.join("report"))?;
    Ok(evaluation)
}
