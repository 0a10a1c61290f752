//! Command-line interface. Settings resolve as flags, then `--config`, then
//! built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use modelfuse_core::checkpoint::meta;
use modelfuse_core::diagnostics::{interpolate, monotonicity_report};
use modelfuse_core::fusion::{fuse, fuse_deltas, FusionWeights};
use modelfuse_core::model::{evaluate, mean_loss, ModelConfig};
use modelfuse_core::tasks::{materialize, Example, FamilyKind};
use modelfuse_core::train::{finetune, pretrain};
use modelfuse_core::Checkpoint;

use crate::csvio;
use crate::error::{Error, Result};
use crate::files::{
    create_dir, load_checkpoint, load_task_spec, read_json, save_checkpoint, write_json,
};
use crate::harness::{
    run_cross_family, run_decay_ablation, run_pairwise, run_source_size_sweep, ExperimentConfig,
    Runner,
};
use crate::manifest::{sidecar_path, ExpKind, ExpRun, Manifest, Run, FILE_NAME};

pub const DEFAULT_SOURCE_SIZES: [usize; 4] = [100, 400, 1600, 6400];

#[derive(Debug, Parser)]
#[command(
    name = "modelfuse",
    version,
    about = "Fuse finetuned checkpoints and run fusion experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Average aligned checkpoints into one.
    Fuse(FuseArgs),
    /// Train the shared initialization on the pretext task.
    Pretrain(PretrainArgs),
    /// Finetune a checkpoint on one task.
    Finetune(FinetuneArgs),
    /// Report accuracy and loss of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run an experiment protocol.
    Exp(ExpArgs),
    /// Evaluate the straight line between two checkpoints.
    Interp(InterpArgs),
    /// Write the spec (and optionally CSV splits) of a family task.
    Task(TaskArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Uniform,
    Datasize,
    Explicit,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Input checkpoint; repeat for each model.
    #[arg(short = 'i', long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Weight of the matching input; implies `--mode explicit`.
    #[arg(short = 'w', long = "weight", allow_negative_numbers = true)]
    pub weights: Vec<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Combine deltas relative to this checkpoint.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
    /// Experiment config or manifest JSON supplying model and training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub task_spec: PathBuf,
    /// Decoupled weight decay.
    #[arg(long)]
    pub decay: Option<f64>,
    /// Shuffle seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
    /// Write the evaluation log as CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required_unless_present = "csv")]
    pub task_spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Evaluate on a dataset CSV instead of a generated split.
    #[arg(long, conflicts_with = "task_spec")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExpArgs {
    #[arg(value_enum)]
    pub kind: ExpKindArg,
    /// Number of seeds (0..N).
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Source family; repeat for several (`cross` only).
    #[arg(long = "family", value_parser = parse_family)]
    pub families: Vec<FamilyKind>,
    /// Target family for `cross`; defaults to the source families.
    #[arg(long = "target-family", value_parser = parse_family)]
    pub target_families: Vec<FamilyKind>,
    /// Weight decay for `cross` and `size`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma-separated source training-set sizes for `size`.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; does not affect results.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Experiment config or an earlier run's manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExpKindArg {
    Cross,
    Pairs,
    Decay,
    Size,
}

impl From<ExpKindArg> for ExpKind {
    fn from(k: ExpKindArg) -> ExpKind {
        match k {
            ExpKindArg::Cross => ExpKind::Cross,
            ExpKindArg::Pairs => ExpKind::Pairs,
            ExpKindArg::Decay => ExpKind::Decay,
            ExpKindArg::Size => ExpKind::Size,
        }
    }
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub task_spec: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    pub split: Split,
    #[arg(long, default_value_t = 11)]
    pub points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TaskArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: FamilyKind,
    /// Position of the task within its family.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write train.csv, val.csv and test.csv here.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_family(s: &str) -> std::result::Result<FamilyKind, String> {
    FamilyKind::parse(s)
        .ok_or_else(|| format!("unknown family `{s}` (general, sametask, samedomain)"))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fuse(a) => cmd_fuse(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Exp(a) => cmd_exp(a),
        Command::Interp(a) => cmd_interp(a),
        Command::Task(a) => cmd_task(a),
    }
}

/// Loads an experiment config from either a bare config or a manifest.
fn load_config(path: Option<&Path>) -> Result<(ExperimentConfig, Option<ExpRun>)> {
    let Some(path) = path else {
        return Ok((ExperimentConfig::default(), None));
    };
    let value: serde_json::Value = read_json(path)?;
    if value.get("run").is_some() {
        let m: Manifest = serde_json::from_value(value).map_err(|e| Error::parse(path, e))?;
        return Ok(match m.run {
            Run::Exp(e) => (e.config.clone(), Some(e)),
            Run::Pretrain { config, .. } | Run::Finetune { config, .. } => (config, None),
            _ => return Err(Error::parse(path, "manifest carries no experiment config")),
        });
    }
    let cfg = serde_json::from_value(value).map_err(|e| Error::parse(path, e))?;
    Ok((cfg, None))
}

fn cmd_fuse(a: FuseArgs) -> Result<()> {
    let mode = a.mode.unwrap_or(if a.weights.is_empty() {
        Mode::Uniform
    } else {
        Mode::Explicit
    });
    let weights = match mode {
        Mode::Uniform | Mode::Datasize if !a.weights.is_empty() => {
            return Err(Error::Usage(
                "--weight only applies to --mode explicit".into(),
            ));
        }
        Mode::Uniform => FusionWeights::Uniform,
        Mode::Datasize => FusionWeights::DataSize,
        Mode::Explicit => {
            if a.weights.len() != a.inputs.len() {
                return Err(Error::Usage(format!(
                    "{} inputs but {} weights",
                    a.inputs.len(),
                    a.weights.len()
                )));
            }
            FusionWeights::Explicit(a.weights.clone())
        }
    };
    let models = a
        .inputs
        .iter()
        .map(load_checkpoint)
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Checkpoint> = models.iter().collect();
    let fused = match &a.base {
        Some(base) => fuse_deltas(&load_checkpoint(base)?, &refs, &weights)?,
        None => fuse(&refs, &weights)?,
    };
    save_checkpoint(&fused, &a.output)?;
    let mode_name = match mode {
        Mode::Uniform => "uniform",
        Mode::Datasize => "datasize",
        Mode::Explicit => "explicit",
    };
    Manifest::new(Run::Fuse {
        inputs: a.inputs,
        mode: mode_name.into(),
        weights: a.weights,
    })
    .write(sidecar_path(&a.output))
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let (config, _) = load_config(a.config.as_deref())?;
    let p = pretrain(&config.model, &config.pretrain, a.seed)?;
    save_checkpoint(&p, &a.output)?;
    Manifest::new(Run::Pretrain {
        seed: a.seed,
        config,
    })
    .write(sidecar_path(&a.output))
}

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    let (mut config, _) = load_config(a.config.as_deref())?;
    if let Some(d) = a.decay {
        config.finetune.weight_decay = d;
    }
    if let Some(s) = a.seed {
        config.finetune.seed = s;
    }
    let base = load_checkpoint(&a.base)?;
    let spec = load_task_spec(&a.task_spec)?;
    let data = materialize(&spec)?;
    let (mut tuned, log) = finetune(&base, &data, &config.finetune)?;
    tuned.set_meta(meta::TASK_ID, spec.task_id.clone());
    tuned.set_meta(meta::TRAIN_SIZE, data.train.len().to_string());
    save_checkpoint(&tuned, &a.output)?;
    if let Some(path) = &a.log {
        csvio::write_train_log(path, &log)?;
    }
    Manifest::new(Run::Finetune {
        base: a.base,
        task: spec,
        config,
    })
    .write(sidecar_path(&a.output))
}

fn split_of(spec_path: &Path, split: Split) -> Result<Vec<Example>> {
    let data = materialize(&load_task_spec(spec_path)?)?;
    Ok(match split {
        Split::Train => data.train,
        Split::Val => data.val,
        Split::Test => data.test,
    })
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let examples = match (&a.csv, &a.task_spec) {
        (Some(csv), _) => {
            let cfg = ModelConfig::from_checkpoint(&model)?;
            csvio::read_dataset(csv, cfg.input_dim, cfg.num_classes)?
        }
        (None, Some(spec)) => split_of(spec, a.split)?,
        (None, None) => {
            return Err(Error::Usage(
                "either --task-spec or --csv is required".into(),
            ))
        }
    };
    let report = serde_json::json!({
        "examples": examples.len(),
        "accuracy": evaluate(&model, &examples)?,
        "loss": mean_loss(&model, &examples)?,
    });
    println!("{report}");
    Ok(())
}

fn resolve_exp(a: &ExpArgs) -> Result<ExpRun> {
    let kind = ExpKind::from(a.kind);
    let (mut config, from_manifest) = load_config(a.config.as_deref())?;
    let mut run = match from_manifest {
        Some(run) if run.kind != kind => {
            return Err(Error::Usage(format!(
                "manifest is for `exp {}`, not `exp {}`",
                run.kind.as_str(),
                kind.as_str()
            )));
        }
        Some(run) => run,
        None => ExpRun {
            kind,
            source_families: vec![FamilyKind::General],
            target_families: vec![FamilyKind::General],
            lambda: 0.0,
            source_sizes: DEFAULT_SOURCE_SIZES.to_vec(),
            config: config.clone(),
        },
    };
    if let Some(n) = a.seeds {
        if n == 0 {
            return Err(Error::Usage("--seeds must be at least 1".into()));
        }
        config.seeds = (0..n).collect();
    }
    if !a.families.is_empty() {
        if kind != ExpKind::Cross && a.families.len() > 1 {
            return Err(Error::Usage(format!(
                "`exp {}` takes a single --family",
                kind.as_str()
            )));
        }
        run.source_families = a.families.clone();
        run.target_families = a.families.clone();
    }
    if !a.target_families.is_empty() {
        if kind != ExpKind::Cross {
            return Err(Error::Usage(
                "--target-family only applies to `exp cross`".into(),
            ));
        }
        run.target_families = a.target_families.clone();
    }
    if let Some(l) = a.lambda {
        run.lambda = l;
    }
    if !a.sizes.is_empty() {
        run.source_sizes = a.sizes.clone();
    }
    run.config = config;
    Ok(run)
}

fn cmd_exp(a: ExpArgs) -> Result<()> {
    let run = resolve_exp(&a)?;
    let runner = Runner::new(a.jobs)?;
    create_dir(&a.out)?;
    let out = &a.out;
    let family = run.source_families[0];
    match run.kind {
        ExpKind::Cross => {
            let r = run_cross_family(
                &run.config,
                &run.source_families,
                &run.target_families,
                run.lambda,
                &runner,
            )?;
            csvio::write_results(out.join("results.csv"), &r.results)?;
            csvio::write_table(out.join("table.csv"), &r.table)?;
        }
        ExpKind::Pairs => {
            let r = run_pairwise(&run.config, family, &runner)?;
            csvio::write_heatmap(out.join("heatmap.csv"), &r)?;
            let summary =
                serde_json::json!({ "fraction_beating_worst": r.fraction_beating_worst() });
            write_json(&summary, out.join("summary.json"))?;
        }
        ExpKind::Decay => {
            let r = run_decay_ablation(&run.config, family, &runner)?;
            csvio::write_results(out.join("results.csv"), &r.results)?;
            csvio::write_table(out.join("table.csv"), &r.table)?;
            csvio::write_norms(out.join("norms.csv"), &r.norms)?;
        }
        ExpKind::Size => {
            let r = run_source_size_sweep(&run.config, family, &run.source_sizes, &runner)?;
            csvio::write_size_sweep(out, &r)?;
        }
    }
    Manifest::new(Run::Exp(run)).write(out.join(FILE_NAME))
}

fn cmd_interp(a: InterpArgs) -> Result<()> {
    let ma = load_checkpoint(&a.a)?;
    let mb = load_checkpoint(&a.b)?;
    let spec = load_task_spec(&a.task_spec)?;
    let data = split_of(&a.task_spec, a.split)?;
    let names = (a.a.display().to_string(), a.b.display().to_string());
    let curve = interpolate(&ma, &mb, &data, a.points, names)?;
    csvio::write_curve(&a.out, &curve)?;
    let report = monotonicity_report(&curve.losses);
    println!(
        "{}",
        serde_json::json!({ "monotone_decreasing": report.monotone_decreasing, "max_bump": report.max_bump })
    );
    Manifest::new(Run::Interp {
        a: a.a,
        b: a.b,
        task: spec,
        split: a.split.as_str().into(),
        points: a.points,
    })
    .write(sidecar_path(&a.out))
}

fn cmd_task(a: TaskArgs) -> Result<()> {
    let (config, _) = load_config(a.config.as_deref())?;
    let specs = config.family_specs(a.family)?;
    let spec = specs.get(a.index).ok_or_else(|| {
        Error::Usage(format!(
            "family has {} tasks, no index {}",
            specs.len(),
            a.index
        ))
    })?;
    write_json(spec, &a.out)?;
    if let Some(dir) = &a.csv_dir {
        create_dir(dir)?;
        let data = materialize(spec)?;
        for (name, split) in [
            ("train", &data.train),
            ("val", &data.val),
            ("test", &data.test),
        ] {
            csvio::write_dataset(dir.join(format!("{name}.csv")), split, spec.input_dim)?;
        }
    }
    Ok(())
}

/// Process exit status for an error: 1 for usage, 2 for data and format.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 1,
        _ => 2,
    }
}
