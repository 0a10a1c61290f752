//! Result records and aggregation shared by every experiment protocol.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Where target finetuning starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaseKind {
    Pretrain,
    Intertrain,
    Fuse,
}

impl BaseKind {
    pub const ALL: [BaseKind; 3] = [BaseKind::Pretrain, BaseKind::Intertrain, BaseKind::Fuse];

    pub fn as_str(self) -> &'static str {
        match self {
            BaseKind::Pretrain => "pretrain",
            BaseKind::Intertrain => "intertrain",
            BaseKind::Fuse => "fuse",
        }
    }
}

/// Test accuracy of one (base model, target task, seed) finetune.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub base_kind: BaseKind,
    /// Family the available models came from; empty for the pretrained base.
    pub source_family: String,
    pub target_family: String,
    pub target_task: String,
    pub seed: u64,
    pub lambda: f64,
    pub accuracy: f64,
}

impl TrialResult {
    fn sort_key(&self) -> (BaseKind, &str, &str, &str, u64, u64) {
        (
            self.base_kind,
            &self.source_family,
            &self.target_family,
            &self.target_task,
            self.seed,
            self.lambda.to_bits(),
        )
    }
}

/// Sorts results into a canonical order so downstream output does not
/// depend on the order trials finished in.
pub fn sort_results(results: &mut [TrialResult]) {
    results.sort_by(|a, b| {
        a.sort_key()
            .partial_cmp(&b.sort_key())
            .unwrap()
            .then(a.accuracy.total_cmp(&b.accuracy))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub base_kind: BaseKind,
    pub source_family: String,
    pub target_family: String,
    pub lambda: f64,
    /// Mean over seeds of the per-seed mean accuracy across target tasks.
    pub mean: f64,
    /// Population standard deviation of that per-seed mean.
    pub std: f64,
    pub num_seeds: usize,
    pub num_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<TableRow>,
}

impl ExperimentTable {
    pub fn row(
        &self,
        base_kind: BaseKind,
        source_family: &str,
        target_family: &str,
    ) -> Option<&TableRow> {
        self.rows.iter().find(|r| {
            r.base_kind == base_kind
                && r.source_family == source_family
                && r.target_family == target_family
        })
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    libm::sqrt(values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64)
}

/// Collapses trials into one row per (base kind, source family, target
/// family, lambda). Within a row, accuracies are first averaged over target
/// tasks per seed; the row reports mean and population std of those
/// per-seed values. Every row must cover the same set of seeds.
pub fn aggregate(results: &[TrialResult]) -> Result<ExperimentTable> {
    if results.is_empty() {
        bail!(Data, "nothing to aggregate");
    }
    let mut sorted = results.to_vec();
    sort_results(&mut sorted);

    type Key = (BaseKind, String, String, u64);
    let mut cells: BTreeMap<Key, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in &sorted {
        if !(0.0..=1.0).contains(&r.accuracy) {
            bail!(Data, "accuracy {} outside [0, 1]", r.accuracy);
        }
        cells
            .entry((
                r.base_kind,
                r.source_family.clone(),
                r.target_family.clone(),
                r.lambda.to_bits(),
            ))
            .or_default()
            .entry(r.seed)
            .or_default()
            .push(r.accuracy);
    }

    let mut seed_set: Option<BTreeSet<u64>> = None;
    let mut rows = Vec::with_capacity(cells.len());
    for ((base_kind, source_family, target_family, lambda_bits), per_seed) in cells {
        let seeds: BTreeSet<u64> = per_seed.keys().copied().collect();
        match &seed_set {
            None => seed_set = Some(seeds),
            Some(s) if *s != seeds => bail!(Data, "cells cover different seed sets"),
            Some(_) => {}
        }
        let seed_means: Vec<f64> = per_seed.values().map(|v| mean(v)).collect();
        let num_trials = per_seed.values().map(Vec::len).sum();
        rows.push(TableRow {
            base_kind,
            source_family,
            target_family,
            lambda: f64::from_bits(lambda_bits),
            mean: mean(&seed_means),
            std: population_std(&seed_means),
            num_seeds: seed_means.len(),
            num_trials,
        });
    }
    Ok(ExperimentTable { rows })
}

/// Colour of a pairwise-fusion heatmap cell, compared with intertraining on
/// either member of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellClass {
    /// Beats both intertrained models.
    Green,
    /// Beats their mean.
    Yellow,
    /// Beats the worse one.
    Red,
    /// Beats neither.
    Black,
}

impl CellClass {
    pub fn as_str(self) -> &'static str {
        match self {
            CellClass::Green => "green",
            CellClass::Yellow => "yellow",
            CellClass::Red => "red",
            CellClass::Black => "black",
        }
    }

    /// Red or better: the fusion beats at least the worse of the two.
    pub fn beats_worst(self) -> bool {
        !matches!(self, CellClass::Black)
    }
}

pub fn classify_cell(fuse_acc: f64, inter_a: f64, inter_b: f64) -> CellClass {
    if fuse_acc > inter_a.max(inter_b) {
        CellClass::Green
    } else if fuse_acc > (inter_a + inter_b) / 2.0 {
        CellClass::Yellow
    } else if fuse_acc > inter_a.min(inter_b) {
        CellClass::Red
    } else {
        CellClass::Black
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn trial(kind: BaseKind, task: &str, seed: u64, acc: f64) -> TrialResult {
        TrialResult {
            base_kind: kind,
            source_family: "general".into(),
            target_family: "general".into(),
            target_task: task.to_string(),
            seed,
            lambda: 0.0,
            accuracy: acc,
        }
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_cell(0.70, 0.68, 0.69), CellClass::Green);
        assert_eq!(classify_cell(0.686, 0.68, 0.69), CellClass::Yellow);
        assert_eq!(classify_cell(0.682, 0.68, 0.69), CellClass::Red);
        assert_eq!(classify_cell(0.67, 0.68, 0.69), CellClass::Black);
        assert_eq!(classify_cell(0.69, 0.68, 0.69), CellClass::Yellow);
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[trial(BaseKind::Fuse, "t", 0, 0.6)]).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert_eq!(one.rows[0].std, 0.0);

        let two = aggregate(&[
            trial(BaseKind::Fuse, "t", 0, 0.6),
            trial(BaseKind::Fuse, "t", 1, 0.8),
        ])
        .unwrap();
        assert!((two.rows[0].mean - 0.7).abs() < 1e-15);
        assert!((two.rows[0].std - 0.1).abs() < 1e-15);

        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn aggregate_averages_tasks_within_seed() {
        let rows = vec![
            trial(BaseKind::Pretrain, "a", 0, 0.5),
            trial(BaseKind::Pretrain, "b", 0, 0.7),
            trial(BaseKind::Pretrain, "a", 1, 0.5),
            trial(BaseKind::Pretrain, "b", 1, 0.7),
        ];
        let t = aggregate(&rows).unwrap();
        let r = t.row(BaseKind::Pretrain, "general", "general").unwrap();
        assert!((r.mean - 0.6).abs() < 1e-15);
        assert_eq!(r.std, 0.0);
        assert_eq!((r.num_seeds, r.num_trials), (2, 4));
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let mut rows = vec![
            trial(BaseKind::Fuse, "a", 0, 0.61),
            trial(BaseKind::Fuse, "b", 0, 0.73),
            trial(BaseKind::Fuse, "a", 1, 0.58),
            trial(BaseKind::Pretrain, "a", 0, 0.52),
            trial(BaseKind::Pretrain, "a", 1, 0.49),
            trial(BaseKind::Fuse, "b", 1, 0.77),
        ];
        let t = aggregate(&rows).unwrap();
        rows.reverse();
        assert_eq!(aggregate(&rows).unwrap(), t);
        rows.swap(1, 4);
        assert_eq!(aggregate(&rows).unwrap(), t);
    }

    #[test]
    fn aggregate_rejects_uneven_seed_sets() {
        let rows = vec![
            trial(BaseKind::Fuse, "a", 0, 0.6),
            trial(BaseKind::Pretrain, "a", 1, 0.6),
        ];
        assert!(aggregate(&rows).is_err());
        assert!(aggregate(&[trial(BaseKind::Fuse, "a", 0, 1.5)]).is_err());
    }
}
