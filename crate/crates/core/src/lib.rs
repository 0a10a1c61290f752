//! Weight-averaging fusion of finetuned checkpoints, plus the pieces needed
//! to study it at toy scale: synthetic classification task families, a small
//! tanh classifier with exact gradients, AdamW with early stopping, and
//! interpolation diagnostics.
//!
//! The crate is `no_std` and only needs `alloc`. File IO, CSV/JSON output,
//! the parallel experiment harness and the command line live in the
//! `modelfuse` companion crate.
//!
//! All arithmetic is carried out in `f64`. Tensors tagged [`DType::F32`] keep
//! their values rounded to single precision after every operation, so a
//! checkpoint always serializes losslessly in its storage type.

#![no_std]

extern crate alloc;

pub mod checkpoint;
pub mod diagnostics;
pub mod error;
pub mod format;
pub mod fusion;
pub mod model;
pub mod optim;
pub mod protocol;
pub mod rng;
pub mod tasks;
pub mod train;

pub use checkpoint::{Checkpoint, DType, Tensor};
pub use error::{Error, Result};
pub use fusion::{
    available_pool, fuse, fuse_deltas, fuse_sources, select_intertrain, FusionWeights, SourceModel,
};
pub use model::ModelConfig;
pub use protocol::{aggregate, classify_cell, BaseKind, CellClass, ExperimentTable, TrialResult};
pub use tasks::{Dataset, Example, FamilyKind, TaskSpec};
pub use train::{finetune, pretrain, StopReason, TrainConfig, TrainLog};
