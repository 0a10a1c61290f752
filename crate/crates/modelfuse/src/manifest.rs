//! `manifest.json`: the fully resolved inputs of a run, enough to repeat it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use modelfuse_core::rng::PRNG_ID;
use modelfuse_core::tasks::FamilyKind;
use modelfuse_core::TaskSpec;

use crate::error::Result;
use crate::files::{read_json, write_json};
use crate::harness::ExperimentConfig;

pub const FILE_NAME: &str = "manifest.json";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpKind {
    Cross,
    Pairs,
    Decay,
    Size,
}

impl ExpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpKind::Cross => "cross",
            ExpKind::Pairs => "pairs",
            ExpKind::Decay => "decay",
            ExpKind::Size => "size",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpRun {
    pub kind: ExpKind,
    /// Source families; `pairs`, `decay` and `size` use only the first.
    pub source_families: Vec<FamilyKind>,
    pub target_families: Vec<FamilyKind>,
    /// Weight decay used by `cross` and `size`.
    pub lambda: f64,
    /// Source training-set sizes for `size`.
    pub source_sizes: Vec<usize>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Run {
    Exp(ExpRun),
    Fuse {
        inputs: Vec<PathBuf>,
        mode: String,
        weights: Vec<f64>,
    },
    Pretrain {
        seed: u64,
        config: ExperimentConfig,
    },
    Finetune {
        base: PathBuf,
        task: TaskSpec,
        config: ExperimentConfig,
    },
    Interp {
        a: PathBuf,
        b: PathBuf,
        task: TaskSpec,
        split: String,
        points: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit: String,
    pub toolkit_version: String,
    pub prng: String,
    pub run: Run,
}

impl Manifest {
    pub fn new(run: Run) -> Manifest {
        Manifest {
            toolkit: "modelfuse".into(),
            toolkit_version: TOOLKIT_VERSION.into(),
            prng: PRNG_ID.into(),
            run,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        read_json(path)
    }
}

/// Where a single-file command puts its manifest: `<output>.manifest.json`.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}
