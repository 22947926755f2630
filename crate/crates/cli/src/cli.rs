use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use icadenoise_core::eval::VotingSchema;
use icadenoise_core::zoo::ModelId;
use icadenoise_core::{Error, Result};

use crate::config::RunConfig;
use crate::pipeline::{self, EvalSelection};

#[derive(Debug, Parser)]
#[command(
    name = "icadenoise",
    version,
    about = "Classify ICA components of resting-state fMRI as signal or artifact"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labelled dataset to OUT/dataset.icad.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        gen: GeneratorArgs,
    },
    /// Cross-validated training; archives go to OUT/models.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset file written by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        sel: Selection,
    },
    /// Score trained models and voting schemas on the test set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Output directory of `train`.
        #[arg(long)]
        runs: PathBuf,
        #[command(flatten)]
        sel: Selection,
    },
    /// Apply voting schemas to saved predictions.
    Vote {
        #[command(flatten)]
        common: Common,
        /// predictions.json written by `evaluate`.
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        sel: Selection,
    },
    /// Render report files from evaluation.json.
    Report {
        #[arg(long)]
        evaluation: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// generate, train, evaluate and report from one master seed.
    FullRun {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        gen: GeneratorArgs,
        #[command(flatten)]
        sel: Selection,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Master seed; also seeds the generator and the subject split.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Override any config key, e.g. `--set train.max_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct GeneratorArgs {
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    components: Option<usize>,
    /// Spatial grid as X,Y,Z.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<[usize; 3]>,
    #[arg(long)]
    timecourse_len: Option<usize>,
    #[arg(long)]
    artifact_fraction: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
struct Selection {
    /// Comma-separated model ids (sm1..sm3, tm1, tm2, ps1, ps2, comb1..comb4).
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    models: Option<Vec<ModelId>>,
    /// Number of cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Voting schema JSON file; repeat for several.
    #[arg(long)]
    schema: Vec<PathBuf>,
}

fn parse_model(s: &str) -> std::result::Result<ModelId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_grid(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| format!("bad grid extent {p:?}"))
        })
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|_| format!("grid needs three extents, got {s:?}"))
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn resolve(common: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    for s in &common.set {
        cfg.apply_set(s).map_err(Failure::Usage)?;
    }
    Ok(cfg)
}

fn apply_generator(cfg: &mut RunConfig, gen: &GeneratorArgs) {
    let g = &mut cfg.generator;
    g.n_subjects = gen.subjects.unwrap_or(g.n_subjects);
    g.components_per_subject = gen.components.unwrap_or(g.components_per_subject);
    g.grid = gen.grid.unwrap_or(g.grid);
    g.timecourse_len = gen.timecourse_len.unwrap_or(g.timecourse_len);
    g.artifact_fraction = gen.artifact_fraction.unwrap_or(g.artifact_fraction);
    g.noise_level = gen.noise.unwrap_or(g.noise_level);
}

fn apply_selection(cfg: &mut RunConfig, sel: &Selection) -> Result<()> {
    if let Some(m) = &sel.models {
        cfg.models = m.clone();
    }
    if let Some(f) = sel.folds {
        cfg.split.n_folds = f;
    }
    if !sel.schema.is_empty() {
        cfg.schemas = sel
            .schema
            .iter()
            .map(|p| VotingSchema::read(p))
            .collect::<Result<Vec<_>>>()?
            .concat();
    }
    Ok(())
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Generate { common, gen } => {
            let mut cfg = resolve(&common)?;
            apply_generator(&mut cfg, &gen);
            print_written(&[pipeline::generate(&cfg, &common.out)?]);
        }
        Command::Train { common, data, sel } => {
            let mut cfg = resolve(&common)?;
            apply_selection(&mut cfg, &sel)?;
            let manifest = pipeline::train(&cfg, &data, &common.out)?;
            println!(
                "{} runs, manifest {}",
                manifest.runs.len(),
                common.out.join(pipeline::MANIFEST_FILE).display()
            );
        }
        Command::Evaluate {
            common,
            data,
            runs,
            sel,
        } => {
            let mut cfg = resolve(&common)?;
            apply_selection(&mut cfg, &sel)?;
            let selection = EvalSelection {
                models: sel.models.clone(),
                strict_schemas: !sel.schema.is_empty(),
            };
            let e = pipeline::evaluate(&cfg, &data, &runs, &common.out, &selection)?;
            print!("{}", icadenoise_core::eval::render_table(&e));
        }
        Command::Vote {
            common,
            predictions,
            sel,
        } => {
            let mut cfg = resolve(&common)?;
            apply_selection(&mut cfg, &sel)?;
            let votes = pipeline::vote(&cfg, &predictions, &common.out)?;
            println!(
                "{} schemas, votes in {}",
                votes.len(),
                common.out.join(pipeline::VOTES_FILE).display()
            );
        }
        Command::Report { evaluation, out } => {
            print_written(&pipeline::report(&evaluation, &out)?);
        }
        Command::FullRun { common, gen, sel } => {
            let mut cfg = resolve(&common)?;
            apply_generator(&mut cfg, &gen);
            apply_selection(&mut cfg, &sel)?;
            let e = pipeline::full_run(&cfg, &common.out)?;
            print!("{}", icadenoise_core::eval::render_table(&e));
        }
    }
    Ok(())
}

fn describe(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        let s_msg = s.to_string();
        if !msg.contains(&s_msg) {
            msg.push_str(": ");
            msg.push_str(&s_msg);
        }
        src = s.source();
    }
    msg
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit status: 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", describe(&e));
            1
        }
    }
}
