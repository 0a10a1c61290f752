//! Minibatch finetuning with periodic validation and early stopping.
//!
//! Validation accuracy is measured every `eval_every_batches` optimizer
//! steps. An evaluation counts as progress when it beats the best accuracy
//! so far by more than `min_improvement`; after `patience_evals`
//! consecutive evaluations without progress training stops. The returned
//! checkpoint is the one with the highest validation accuracy seen (first
//! occurrence), not the last one trained.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{meta, Checkpoint};
use crate::error::{bail, Result};
use crate::model::{Mlp, ModelConfig};
use crate::optim::AdamW;
use crate::rng::{derive_seed, substream};
use crate::tasks::{materialize, pretext_task, Dataset, Example};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every_batches: u64,
    pub patience_evals: u64,
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            batch_size: 32,
            max_steps: 20_000,
            eval_every_batches: 50,
            patience_evals: 50,
            min_improvement: 0.001,
            seed: 0,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.eval_every_batches < 1 {
            bail!(Config, "eval_every_batches must be >= 1");
        }
        if self.patience_evals < 1 {
            bail!(Config, "patience_evals must be >= 1");
        }
        if !(self.weight_decay >= 0.0) {
            bail!(Config, "weight_decay must be >= 0");
        }
        if self.batch_size < 1 {
            bail!(Config, "batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            bail!(Config, "learning_rate and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bail!(Config, "betas must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    /// Mean minibatch loss since the previous evaluation.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Patience,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EvalRecord>,
    pub stopping_reason: StopReason,
    /// Step of the returned checkpoint; 0 when no training happened.
    pub best_step: u64,
    pub best_val_accuracy: Option<f64>,
}

struct Tracker {
    best_acc: f64,
    best_step: u64,
    best: Option<Mlp>,
    stale: u64,
}

impl Tracker {
    /// Returns true when patience is exhausted.
    fn observe(&mut self, cfg: &TrainConfig, step: u64, acc: f64, model: &Mlp) -> bool {
        let first = self.best.is_none();
        // Tiny slack so an exact `min_improvement` gain is not decided by rounding.
        let progressed = first || acc > self.best_acc + cfg.min_improvement + 1e-12;
        if first || acc > self.best_acc {
            self.best_acc = acc;
            self.best_step = step;
            self.best = Some(model.clone());
        }
        if progressed {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= cfg.patience_evals
    }
}

/// Trains `base` on `data.train`, selecting on `data.val`.
pub fn finetune(
    base: &Checkpoint,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainLog)> {
    finetune_on(base, &data.train, &data.val, cfg)
}

pub fn finetune_on(
    base: &Checkpoint,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    let mut model = Mlp::from_checkpoint(base)?;
    if train.is_empty() {
        bail!(Data, "empty training split");
    }
    if val.is_empty() {
        bail!(Data, "empty validation split");
    }
    if cfg.max_steps == 0 {
        let log = TrainLog {
            records: Vec::new(),
            stopping_reason: StopReason::MaxSteps,
            best_step: 0,
            best_val_accuracy: None,
        };
        return Ok((base.clone(), log));
    }

    let opt = AdamW::from(cfg);
    let mut grad = Mlp::zeros(model.cfg);
    let mut m = Mlp::zeros(model.cfg);
    let mut v = Mlp::zeros(model.cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch: Vec<&Example> = Vec::with_capacity(cfg.batch_size);
    let mut tracker = Tracker {
        best_acc: f64::NEG_INFINITY,
        best_step: 0,
        best: None,
        stale: 0,
    };
    let mut records = Vec::new();
    let mut window_loss = 0.0;
    let mut window_batches = 0u64;
    let mut step = 0u64;
    let mut epoch = 0u64;

    let reason = 'outer: loop {
        let mut rng = substream(cfg.seed, "shuffle", epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        epoch += 1;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &train[i]));
            window_loss += model.loss_and_grad(&batch, &mut grad)?;
            window_batches += 1;
            step += 1;
            for (((p, g), mm), vv) in model
                .buffers_mut()
                .into_iter()
                .zip(grad.buffers())
                .zip(m.buffers_mut())
                .zip(v.buffers_mut())
            {
                opt.update(step, p, g, mm, vv);
            }

            let at_eval = step.is_multiple_of(cfg.eval_every_batches);
            let at_end = step >= cfg.max_steps;
            if at_eval || at_end {
                let acc = model.accuracy(val)?;
                records.push(EvalRecord {
                    step,
                    train_loss: window_loss / window_batches as f64,
                    val_accuracy: acc,
                });
                window_loss = 0.0;
                window_batches = 0;
                if tracker.observe(cfg, step, acc, &model) {
                    break 'outer StopReason::Patience;
                }
            }
            if at_end {
                break 'outer StopReason::MaxSteps;
            }
        }
    };

    let best = tracker.best.expect("at least one evaluation ran");
    let mut out = best.to_checkpoint(base)?;
    out.clear_meta();
    if let Some(arch) = base.meta_value(meta::ARCH) {
        out.set_meta(meta::ARCH, arch);
    }
    let log = TrainLog {
        records,
        stopping_reason: reason,
        best_step: tracker.best_step,
        best_val_accuracy: Some(tracker.best_acc),
    };
    Ok((out, log))
}

/// The shared initialization: a seeded random init trained on the pretext
/// task.
pub fn pretrain(model_cfg: &ModelConfig, train_cfg: &TrainConfig, seed: u64) -> Result<Checkpoint> {
    let mut spec = pretext_task(seed);
    spec.input_dim = model_cfg.input_dim;
    spec.num_classes = model_cfg.num_classes;
    let data = materialize(&spec)?;
    let init = model_cfg.init(derive_seed(seed, "pretrain-init", 0));
    let cfg = TrainConfig {
        seed: derive_seed(seed, "pretrain-shuffle", 0),
        ..train_cfg.clone()
    };
    let (mut p, _) = finetune(&init, &data, &cfg)?;
    p.set_meta(meta::SEED, alloc::format!("{}", seed));
    Ok(p)
}
