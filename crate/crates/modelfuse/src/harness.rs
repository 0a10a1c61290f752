//! Experiment protocols: cross-family base-model comparison, pairwise
//! fusion heatmap, weight-decay ablation and source-size sweep.
//!
//! Every trial is a pure function of the experiment config and its key
//! (seed, family, task, ...), so trials run in parallel on a rayon pool and
//! the collected results are sorted before anything is written out.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use modelfuse_core::fusion::{
    available_pool, fuse_sources, select_intertrain, FusionWeights, SourceModel,
};
use modelfuse_core::protocol::{
    aggregate, classify_cell, sort_results, BaseKind, CellClass, ExperimentTable, TrialResult,
};
use modelfuse_core::rng::derive_seed;
use modelfuse_core::tasks::{
    make_family_with, materialize, Dataset, FamilyConfig, FamilyKind, TaskSpec,
};
use modelfuse_core::train::{finetune, pretrain, TrainConfig};
use modelfuse_core::{Checkpoint, ModelConfig};

use crate::error::{Error, Result};

/// Everything that determines an experiment's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// Used for the shared initialization.
    pub pretrain: TrainConfig,
    /// Used for source and target finetuning; `weight_decay` is overridden
    /// per run by `lambda`.
    pub finetune: TrainConfig,
    pub family: FamilyConfig,
    pub num_tasks: usize,
    /// Training-set size of each family task, in task order.
    pub task_sizes: Vec<usize>,
    /// Seeds the task families (fixed across repetitions).
    pub family_seed: u64,
    /// One repetition per seed.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            pretrain: TrainConfig::default(),
            finetune: TrainConfig::default(),
            family: FamilyConfig::default(),
            num_tasks: 5,
            task_sizes: vec![4000, 2000, 1000, 500, 250],
            family_seed: 2022,
            seeds: (0..5).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn family_specs(&self, kind: FamilyKind) -> Result<Vec<TaskSpec>> {
        let seed = derive_seed(self.family_seed, kind.as_str(), 0);
        let mut specs =
            make_family_with(&self.family, kind, self.num_tasks, &self.task_sizes, seed)?;
        for s in &mut specs {
            s.input_dim = self.model.input_dim;
            s.num_classes = self.model.num_classes;
        }
        Ok(specs)
    }

    fn finetune_cfg(&self, lambda: f64, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            weight_decay: lambda,
            seed: shuffle_seed,
            ..self.finetune.clone()
        }
    }
}

/// Runs closures on a pool capped at `jobs` workers (0 = rayon default).
pub struct Runner {
    pool: rayon::ThreadPool,
}

impl Runner {
    pub fn new(jobs: usize) -> Result<Runner> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
        Ok(Runner { pool })
    }

    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Result<Vec<R>>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> Result<R> + Sync + Send,
    {
        self.pool.install(|| items.into_par_iter().map(f).collect())
    }
}

/// Materialized tasks and per-seed models, shared by the protocols.
struct World {
    cfg: ExperimentConfig,
    families: BTreeMap<FamilyKind, Vec<Arc<Dataset>>>,
    pretrained: BTreeMap<u64, Arc<Checkpoint>>,
}

impl World {
    fn build(cfg: &ExperimentConfig, kinds: &[FamilyKind], runner: &Runner) -> Result<World> {
        if cfg.seeds.is_empty() {
            return Err(Error::Usage("at least one seed is required".into()));
        }
        let mut families = BTreeMap::new();
        for &kind in kinds {
            let specs = cfg.family_specs(kind)?;
            let data = runner.map(specs, |s| Ok(Arc::new(materialize(&s)?)))?;
            families.insert(kind, data);
        }
        let pretrained = runner.map(cfg.seeds.clone(), |seed| {
            Ok((seed, Arc::new(pretrain(&cfg.model, &cfg.pretrain, seed)?)))
        })?;
        Ok(World {
            cfg: cfg.clone(),
            families,
            pretrained: pretrained.into_iter().collect(),
        })
    }

    fn family(&self, kind: FamilyKind) -> &[Arc<Dataset>] {
        &self.families[&kind]
    }

    /// Source models of `kind` for every seed, keyed by seed.
    fn sources(
        &self,
        kind: FamilyKind,
        lambda: f64,
        train_size: Option<usize>,
        runner: &Runner,
    ) -> Result<Pools> {
        let mut jobs = Vec::new();
        for &seed in &self.cfg.seeds {
            for data in self.family(kind) {
                jobs.push((seed, data.clone()));
            }
        }
        let trained = runner.map(jobs, |(seed, data)| {
            let data = match train_size {
                Some(n) => Arc::new(Dataset::with_train_size(&data.spec, n)?),
                None => data,
            };
            let shuffle = derive_seed(seed, &format!("source/{}", data.spec.task_id), 0);
            let (ckpt, _) = finetune(
                &self.pretrained[&seed],
                &data,
                &self.cfg.finetune_cfg(lambda, shuffle),
            )?;
            let mut ckpt = ckpt;
            ckpt.set_meta(
                modelfuse_core::checkpoint::meta::TASK_ID,
                data.spec.task_id.clone(),
            );
            ckpt.set_meta(
                modelfuse_core::checkpoint::meta::TRAIN_SIZE,
                data.train.len().to_string(),
            );
            let model = SourceModel::new(data.spec.task_id.clone(), data.train.len() as u64, ckpt)?;
            Ok((seed, model))
        })?;
        let mut out: BTreeMap<u64, Vec<SourceModel>> = BTreeMap::new();
        for (seed, m) in trained {
            out.entry(seed).or_default().push(m);
        }
        Ok(out)
    }

    /// Finetunes `base` on the target and returns test accuracy. The shuffle
    /// stream depends only on (seed, target), so all bases see the same
    /// batches.
    fn target_accuracy(
        &self,
        base: &Checkpoint,
        target: &Dataset,
        seed: u64,
        lambda: f64,
    ) -> Result<f64> {
        let shuffle = derive_seed(seed, &format!("target/{}", target.spec.task_id), 0);
        let (tuned, _) = finetune(base, target, &self.cfg.finetune_cfg(lambda, shuffle))?;
        Ok(modelfuse_core::model::evaluate(&tuned, &target.test)?)
    }
}

/// Base model for one trial.
fn base_for(
    kind: BaseKind,
    pretrained: &Checkpoint,
    pool: &[SourceModel],
    target_task: &str,
) -> Result<Checkpoint> {
    let available = available_pool(pool, target_task);
    assert!(
        available.iter().all(|m| m.task_id != target_task),
        "target leaked into its fuse pool"
    );
    Ok(match kind {
        BaseKind::Pretrain => pretrained.clone(),
        BaseKind::Intertrain => {
            let chosen = select_intertrain(pool, target_task)?;
            assert_ne!(
                chosen.task_id, target_task,
                "target chosen for intertraining"
            );
            chosen.checkpoint.clone()
        }
        BaseKind::Fuse => {
            if available.is_empty() {
                return Err(modelfuse_core::Error::NoCandidate(target_task.into()).into());
            }
            fuse_sources(&available, &FusionWeights::Uniform)?
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossFamilyOutput {
    pub results: Vec<TrialResult>,
    pub table: ExperimentTable,
}

pub fn run_cross_family(
    cfg: &ExperimentConfig,
    sources: &[FamilyKind],
    targets: &[FamilyKind],
    lambda: f64,
    runner: &Runner,
) -> Result<CrossFamilyOutput> {
    let mut kinds: Vec<FamilyKind> = sources.iter().chain(targets).copied().collect();
    kinds.sort();
    kinds.dedup();
    let world = World::build(cfg, &kinds, runner)?;
    let mut pools = BTreeMap::new();
    for &s in sources {
        pools.insert(s, world.sources(s, lambda, None, runner)?);
    }
    cross_family_in(&world, &pools, targets, lambda, runner)
}

type Pools = BTreeMap<u64, Vec<SourceModel>>;

fn cross_family_in(
    world: &World,
    pools: &BTreeMap<FamilyKind, Pools>,
    targets: &[FamilyKind],
    lambda: f64,
    runner: &Runner,
) -> Result<CrossFamilyOutput> {
    let sources: Vec<FamilyKind> = pools.keys().copied().collect();
    let mut jobs = Vec::new();
    for &seed in &world.cfg.seeds {
        for &t in targets {
            for target in world.family(t) {
                jobs.push((BaseKind::Pretrain, None, t, target.clone(), seed));
                for &s in &sources {
                    jobs.push((BaseKind::Intertrain, Some(s), t, target.clone(), seed));
                    jobs.push((BaseKind::Fuse, Some(s), t, target.clone(), seed));
                }
            }
        }
    }
    let mut results = runner.map(jobs, |(kind, source, tfam, target, seed)| {
        let empty = Vec::new();
        let pool = source.map(|s| &pools[&s][&seed]).unwrap_or(&empty);
        let base = base_for(kind, &world.pretrained[&seed], pool, &target.spec.task_id)?;
        let accuracy = world.target_accuracy(&base, &target, seed, lambda)?;
        Ok(TrialResult {
            base_kind: kind,
            source_family: source.map(|s| s.as_str().to_string()).unwrap_or_default(),
            target_family: tfam.as_str().to_string(),
            target_task: target.spec.task_id.clone(),
            seed,
            lambda,
            accuracy,
        })
    })?;
    sort_results(&mut results);
    let table = aggregate(&results)?;
    Ok(CrossFamilyOutput { results, table })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCell {
    pub row: String,
    pub col: String,
    /// Mean accuracy gain over finetuning from the pretrained model, on the
    /// same targets and seeds.
    pub improvement: f64,
    /// `None` on the diagonal, which holds plain intertraining.
    pub class: Option<CellClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseOutput {
    pub tasks: Vec<String>,
    /// `cells[i][j]`; symmetric.
    pub cells: Vec<Vec<PairCell>>,
}

impl PairwiseOutput {
    /// Share of off-diagonal pairs (i < j) where the fusion beats the weaker
    /// intertrained model.
    pub fn fraction_beating_worst(&self) -> f64 {
        let n = self.tasks.len();
        let mut hits = 0usize;
        let mut total = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                total += 1;
                if self.cells[i][j].class.is_some_and(CellClass::beats_worst) {
                    hits += 1;
                }
            }
        }
        hits as f64 / total as f64
    }
}

pub fn run_pairwise(
    cfg: &ExperimentConfig,
    family: FamilyKind,
    runner: &Runner,
) -> Result<PairwiseOutput> {
    let world = World::build(cfg, &[family], runner)?;
    let tasks = world.family(family).to_vec();
    let n = tasks.len();
    if n < 3 {
        return Err(Error::Usage(
            "pairwise fusion needs a family of at least 3 tasks".into(),
        ));
    }
    let pools = world.sources(family, 0.0, None, runner)?;

    // (i, j) with i <= j; i == j is intertraining on model i.
    let mut jobs = Vec::new();
    for &seed in &cfg.seeds {
        for (t, target) in tasks.iter().enumerate() {
            jobs.push((None, t, target.clone(), seed));
            for i in 0..n {
                for j in i..n {
                    if t != i && t != j {
                        jobs.push((Some((i, j)), t, target.clone(), seed));
                    }
                }
            }
        }
    }
    let accs = runner.map(jobs, |(pair, t, target, seed)| {
        let pool = &pools[&seed];
        let base = match pair {
            None => world.pretrained[&seed].as_ref().clone(),
            Some((i, j)) if i == j => pool[i].checkpoint.clone(),
            Some((i, j)) => fuse_sources(&[&pool[i], &pool[j]], &FusionWeights::Uniform)?,
        };
        let acc = world.target_accuracy(&base, &target, seed, 0.0)?;
        Ok(((pair, t, seed), acc))
    })?;
    let accs: BTreeMap<_, _> = accs.into_iter().collect();

    let improvement = |i: usize, j: usize| -> f64 {
        let mut gains = Vec::new();
        for &seed in &cfg.seeds {
            for t in (0..n).filter(|&t| t != i && t != j) {
                gains.push(accs[&(Some((i, j)), t, seed)] - accs[&(None, t, seed)]);
            }
        }
        modelfuse_core::protocol::mean(&gains)
    };
    let diag: Vec<f64> = (0..n).map(|i| improvement(i, i)).collect();
    let ids: Vec<String> = tasks.iter().map(|d| d.spec.task_id.clone()).collect();
    let cells = (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    let (i, j) = (r.min(c), r.max(c));
                    let imp = if i == j { diag[i] } else { improvement(i, j) };
                    PairCell {
                        row: ids[r].clone(),
                        col: ids[c].clone(),
                        improvement: imp,
                        class: (i != j).then(|| classify_cell(imp, diag[i], diag[j])),
                    }
                })
                .collect()
        })
        .collect();
    Ok(PairwiseOutput { tasks: ids, cells })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayOutput {
    pub results: Vec<TrialResult>,
    pub table: ExperimentTable,
    /// `(seed, task, norm without decay, norm with decay)` for every paired
    /// source finetune.
    pub norms: Vec<(u64, String, f64, f64)>,
}

pub const DECAY_VALUES: [f64; 2] = [0.0, 0.01];

pub fn run_decay_ablation(
    cfg: &ExperimentConfig,
    family: FamilyKind,
    runner: &Runner,
) -> Result<DecayOutput> {
    let world = World::build(cfg, &[family], runner)?;
    let mut results = Vec::new();
    let mut pools = Vec::new();
    for &lambda in &DECAY_VALUES {
        let p = BTreeMap::from([(family, world.sources(family, lambda, None, runner)?)]);
        results.extend(cross_family_in(&world, &p, &[family], lambda, runner)?.results);
        pools.push(p.into_values().next().unwrap());
    }
    sort_results(&mut results);
    let table = aggregate(&results)?;

    let (plain, decayed) = (&pools[0], &pools[1]);
    let mut norms = Vec::new();
    for (seed, models) in plain {
        for (a, b) in models.iter().zip(&decayed[seed]) {
            norms.push((
                *seed,
                a.task_id.clone(),
                a.checkpoint.l2_norm(),
                b.checkpoint.l2_norm(),
            ));
        }
    }
    Ok(DecayOutput {
        results,
        table,
        norms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizePoint {
    pub source_train_size: usize,
    pub base_kind: BaseKind,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeSweepOutput {
    pub results: Vec<(usize, TrialResult)>,
    pub curve: Vec<SizePoint>,
}

pub fn run_source_size_sweep(
    cfg: &ExperimentConfig,
    family: FamilyKind,
    sizes: &[usize],
    runner: &Runner,
) -> Result<SizeSweepOutput> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage(
            "source sizes must be non-empty and strictly ascending".into(),
        ));
    }
    let world = World::build(cfg, &[family], runner)?;
    let trial_jobs = |kinds: &[BaseKind]| {
        let mut jobs = Vec::new();
        for &seed in &cfg.seeds {
            for target in world.family(family) {
                for &kind in kinds {
                    jobs.push((kind, target.clone(), seed));
                }
            }
        }
        jobs
    };
    let run = |pool: &Pools, kinds: &[BaseKind]| {
        runner.map(trial_jobs(kinds), |(kind, target, seed)| {
            let empty = Vec::new();
            let pool = pool.get(&seed).unwrap_or(&empty);
            let base = base_for(kind, &world.pretrained[&seed], pool, &target.spec.task_id)?;
            Ok(TrialResult {
                base_kind: kind,
                source_family: if kind == BaseKind::Pretrain {
                    String::new()
                } else {
                    family.as_str().into()
                },
                target_family: family.as_str().into(),
                target_task: target.spec.task_id.clone(),
                seed,
                lambda: 0.0,
                accuracy: world.target_accuracy(&base, &target, seed, 0.0)?,
            })
        })
    };
    // The pretrained baseline does not depend on the source size.
    let baseline = run(&Pools::new(), &[BaseKind::Pretrain])?;
    let mut results = Vec::new();
    let mut curve = Vec::new();
    for &size in sizes {
        let pools = world.sources(family, 0.0, Some(size), runner)?;
        let mut trials = run(&pools, &[BaseKind::Intertrain, BaseKind::Fuse])?;
        trials.extend(baseline.iter().cloned());
        sort_results(&mut trials);
        let table = aggregate(&trials)?;
        for row in &table.rows {
            curve.push(SizePoint {
                source_train_size: size,
                base_kind: row.base_kind,
                mean: row.mean,
                std: row.std,
            });
        }
        results.extend(trials.into_iter().map(|t| (size, t)));
    }
    Ok(SizeSweepOutput { results, curve })
}
