//! Fusing finetuned checkpoints into a new base model, and picking the
//! baselines it competes with.
//!
//! Uniform fusion is the elementwise mean `(W_1 + ... + W_n) / n` of aligned
//! checkpoints. Weighted variants use any non-negative weights, normalized to
//! sum to one, so the result is always a convex combination of the inputs.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{meta, Checkpoint};
use crate::error::{bail, Error, Result};

/// A finetuned checkpoint together with the task it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub task_id: String,
    pub train_size: u64,
    pub checkpoint: Checkpoint,
}

impl SourceModel {
    pub fn new(
        task_id: impl Into<String>,
        train_size: u64,
        checkpoint: Checkpoint,
    ) -> Result<Self> {
        let task_id = task_id.into();
        if task_id.is_empty() {
            bail!(Config, "source task id must be non-empty");
        }
        if train_size == 0 {
            bail!(Config, "source `{}` has train_size 0", task_id);
        }
        Ok(SourceModel {
            task_id,
            train_size,
            checkpoint,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FusionWeights {
    /// `1/n` each.
    Uniform,
    /// Proportional to each model's training-set size.
    DataSize,
    /// Caller-supplied non-negative weights, one per model.
    Explicit(Vec<f64>),
}

impl FusionWeights {
    /// Effective weights, summing to one. `sizes[i]` is consulted only in
    /// `DataSize` mode.
    pub fn resolve(&self, n: usize, sizes: &[Option<u64>]) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::EmptyFusion);
        }
        let raw: Vec<f64> = match self {
            FusionWeights::Uniform => return Ok(alloc::vec![1.0 / n as f64; n]),
            FusionWeights::DataSize => sizes
                .iter()
                .take(n)
                .enumerate()
                .map(|(i, s)| {
                    s.map(|v| v as f64).ok_or_else(|| {
                        Error::Weight(alloc::format!("model {} has no training-set size", i))
                    })
                })
                .collect::<Result<_>>()?,
            FusionWeights::Explicit(w) => w.clone(),
        };
        if raw.len() != n {
            bail!(Weight, "{} weights for {} models", raw.len(), n);
        }
        if let Some(bad) = raw.iter().find(|w| !w.is_finite() || **w < 0.0) {
            bail!(
                Weight,
                "weights must be finite and non-negative, got {}",
                bad
            );
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            bail!(Weight, "at least one weight must be positive");
        }
        Ok(raw.into_iter().map(|w| w / total).collect())
    }
}

fn train_size_of(c: &Checkpoint) -> Option<u64> {
    c.meta_value(meta::TRAIN_SIZE).and_then(|s| s.parse().ok())
}

fn check_pool(models: &[&Checkpoint]) -> Result<()> {
    let first = models.first().ok_or(Error::EmptyFusion)?;
    for m in &models[1..] {
        first.check_aligned(m)?;
    }
    Ok(())
}

/// Sorted, de-duplicated task ids of the contributors, comma separated.
fn contributors(models: &[&Checkpoint]) -> String {
    let mut ids: Vec<&str> = models
        .iter()
        .filter_map(|m| m.meta_value(meta::TASK_ID))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids.join(",")
}

/// Convex combination of `models`, evaluated elementwise.
///
/// In `DataSize` mode the sizes are read from each checkpoint's
/// `train_size` metadata; use [`fuse_sources`] to take them from
/// [`SourceModel`]s instead.
pub fn fuse(models: &[&Checkpoint], weights: &FusionWeights) -> Result<Checkpoint> {
    let sizes: Vec<Option<u64>> = models.iter().map(|m| train_size_of(m)).collect();
    combine(None, models, weights, &sizes)
}

/// `base + sum_i w_i (models[i] - base)`: fusion phrased over the deltas each
/// model learned on top of `base`. For convex weights this equals [`fuse`].
pub fn fuse_deltas(
    base: &Checkpoint,
    models: &[&Checkpoint],
    weights: &FusionWeights,
) -> Result<Checkpoint> {
    let sizes: Vec<Option<u64>> = models.iter().map(|m| train_size_of(m)).collect();
    combine(Some(base), models, weights, &sizes)
}

pub fn fuse_sources(sources: &[&SourceModel], weights: &FusionWeights) -> Result<Checkpoint> {
    let models: Vec<&Checkpoint> = sources.iter().map(|s| &s.checkpoint).collect();
    let sizes: Vec<Option<u64>> = sources.iter().map(|s| Some(s.train_size)).collect();
    let mut out = combine(None, &models, weights, &sizes)?;
    let mut ids: Vec<&str> = sources.iter().map(|s| s.task_id.as_str()).collect();
    ids.sort_unstable();
    out.set_meta(meta::FUSED_FROM, ids.join(","));
    Ok(out)
}

fn combine(
    base: Option<&Checkpoint>,
    models: &[&Checkpoint],
    weights: &FusionWeights,
    sizes: &[Option<u64>],
) -> Result<Checkpoint> {
    check_pool(models)?;
    if let Some(b) = base {
        b.check_aligned(models[0])?;
    }
    let w = weights.resolve(models.len(), sizes)?;
    let first = models[0];
    let mut out = first.map_tensors(|name, t0| {
        let inputs: Vec<&[f64]> = models.iter().map(|m| m.get(name).unwrap().data()).collect();
        let base_data = base.map(|b| b.get(name).unwrap().data());
        let mut values = Vec::with_capacity(t0.len());
        for j in 0..t0.len() {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            let mut acc = 0.0;
            match base_data {
                None => {
                    for (x, wi) in inputs.iter().zip(&w) {
                        acc += wi * x[j];
                        lo = lo.min(x[j]);
                        hi = hi.max(x[j]);
                    }
                }
                Some(p) => {
                    for (x, wi) in inputs.iter().zip(&w) {
                        acc += wi * (x[j] - p[j]);
                        lo = lo.min(x[j]);
                        hi = hi.max(x[j]);
                    }
                    acc += p[j];
                }
            }
            // Rounding can leave the convex hull of the inputs by an ulp.
            values.push(acc.clamp(lo, hi));
        }
        Ok(values)
    })?;
    let ids = contributors(models);
    if !ids.is_empty() {
        out.set_meta(meta::FUSED_FROM, ids);
    }
    Ok(out)
}

/// Models that may be used when `target_task` is the task being learned.
pub fn available_pool<'a>(all: &'a [SourceModel], target_task: &str) -> Vec<&'a SourceModel> {
    all.iter().filter(|m| m.task_id != target_task).collect()
}

/// Intertraining baseline: the available model with the largest training
/// set. Equal sizes go to the lexicographically smallest task id.
pub fn select_intertrain<'a>(
    pool: &'a [SourceModel],
    target_task: &str,
) -> Result<&'a SourceModel> {
    pool.iter()
        .filter(|m| m.task_id != target_task)
        .min_by(|a, b| {
            b.train_size
                .cmp(&a.train_size)
                .then_with(|| a.task_id.cmp(&b.task_id))
        })
        .ok_or_else(|| Error::NoCandidate(target_task.to_string()))
}
