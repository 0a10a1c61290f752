//! Synthetic classification task families.
//!
//! A task is a pair (domain, concept). The domain fixes the input
//! distribution: a Gaussian mixture in latent coordinates pushed through a
//! random orthogonal map with per-axis scaling. The concept fixes the
//! labelling rule: `argmax_k (T x + b)_k` for a teacher matrix `T` with
//! orthonormal rows and biases `b` that balance the classes on the task's
//! domain. Every task shares the same label count, so every
//! finetuned model has the same output layer and checkpoints stay aligned.
//!
//! Families differ in what their members share:
//!
//! * `SameDomain`: one domain, independent concepts.
//! * `SameTask`: one base teacher, perturbed per task, independent domains.
//! * `General`: nothing shared.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::{derive_seed, substream, StreamRng};

pub const DEFAULT_INPUT_DIM: usize = 16;
pub const DEFAULT_NUM_CLASSES: usize = 4;
pub const PRETEXT_TRAIN_SIZE: usize = 20_000;

/// Number of mixture components in the latent input distribution.
const MIXTURE_COMPONENTS: usize = 4;
/// Standard deviation of mixture centers, relative to unit component noise.
const CENTER_SCALE: f64 = 0.75;
const AXIS_SCALE_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    General,
    SameTask,
    SameDomain,
}

impl FamilyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FamilyKind::General => "general",
            FamilyKind::SameTask => "sametask",
            FamilyKind::SameDomain => "samedomain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "general" => Some(FamilyKind::General),
            "sametask" => Some(FamilyKind::SameTask),
            "samedomain" => Some(FamilyKind::SameDomain),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub family_id: String,
    pub input_dim: usize,
    pub num_classes: usize,
    pub domain_seed: u64,
    pub concept_seed: u64,
    /// 0 uses the base teacher of `concept_seed`; `i > 0` adds the i-th
    /// perturbation of relative norm `concept_perturbation`.
    pub concept_variant: u64,
    pub concept_perturbation: f64,
    pub label_noise: f64,
    /// Seeds the example draws.
    pub data_seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.task_id.is_empty() {
            bail!(Config, "task id must be non-empty");
        }
        if self.input_dim == 0 {
            bail!(Config, "input_dim must be >= 1");
        }
        if self.num_classes < 2 || self.num_classes > self.input_dim {
            bail!(
                Config,
                "num_classes must be in [2, input_dim], got {}",
                self.num_classes
            );
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            bail!(
                Config,
                "label_noise must be in [0, 0.5), got {}",
                self.label_noise
            );
        }
        if !(self.concept_perturbation >= 0.0 && self.concept_perturbation.is_finite()) {
            bail!(Config, "concept_perturbation must be finite and >= 0");
        }
        Ok(())
    }
}

/// Knobs shared by every task in a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    pub label_noise: f64,
    pub concept_perturbation: f64,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig {
            input_dim: DEFAULT_INPUT_DIM,
            num_classes: DEFAULT_NUM_CLASSES,
            label_noise: 0.05,
            concept_perturbation: 0.1,
            val_size: 1000,
            test_size: 1000,
        }
    }
}

pub fn make_family(
    kind: FamilyKind,
    num_tasks: usize,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<TaskSpec>> {
    make_family_with(&FamilyConfig::default(), kind, num_tasks, sizes, seed)
}

pub fn make_family_with(
    cfg: &FamilyConfig,
    kind: FamilyKind,
    num_tasks: usize,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<TaskSpec>> {
    if num_tasks < 2 {
        bail!(Config, "a family needs at least 2 tasks, got {}", num_tasks);
    }
    if sizes.len() != num_tasks {
        bail!(Config, "{} sizes for {} tasks", sizes.len(), num_tasks);
    }
    for (i, s) in sizes.iter().enumerate() {
        if sizes[..i].contains(s) {
            bail!(Config, "duplicate train size {}", s);
        }
    }
    let family_id = kind.as_str();
    let specs = (0..num_tasks)
        .map(|i| {
            let idx = i as u64;
            let (domain_seed, concept_seed, concept_variant) = match kind {
                FamilyKind::General => (
                    derive_seed(seed, "domain", idx),
                    derive_seed(seed, "concept", idx),
                    0,
                ),
                FamilyKind::SameDomain => (
                    derive_seed(seed, "domain", 0),
                    derive_seed(seed, "concept", idx),
                    0,
                ),
                FamilyKind::SameTask => (
                    derive_seed(seed, "domain", idx),
                    derive_seed(seed, "concept", 0),
                    idx + 1,
                ),
            };
            TaskSpec {
                task_id: format!("{}-{}", family_id, i),
                family_id: family_id.into(),
                input_dim: cfg.input_dim,
                num_classes: cfg.num_classes,
                domain_seed,
                concept_seed,
                concept_variant,
                concept_perturbation: cfg.concept_perturbation,
                label_noise: cfg.label_noise,
                data_seed: derive_seed(seed, "data", idx),
                train_size: sizes[i],
                val_size: cfg.val_size,
                test_size: cfg.test_size,
            }
        })
        .collect::<Vec<_>>();
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

/// The broad task the shared initialization is trained on.
pub fn pretext_task(seed: u64) -> TaskSpec {
    TaskSpec {
        task_id: "pretext".into(),
        family_id: "pretext".into(),
        input_dim: DEFAULT_INPUT_DIM,
        num_classes: DEFAULT_NUM_CLASSES,
        domain_seed: derive_seed(seed, "pretext-domain", 0),
        concept_seed: derive_seed(seed, "pretext-concept", 0),
        concept_variant: 0,
        concept_perturbation: 0.0,
        label_noise: 0.0,
        data_seed: derive_seed(seed, "pretext-data", 0),
        train_size: PRETEXT_TRAIN_SIZE,
        val_size: 1000,
        test_size: 1000,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    /// Rebuilds the dataset with a different training-set size; validation
    /// and test splits are unchanged.
    pub fn with_train_size(spec: &TaskSpec, train_size: usize) -> Result<Dataset> {
        let mut s = spec.clone();
        s.train_size = train_size;
        materialize(&s)
    }
}

/// Input distribution of one domain.
#[derive(Debug, Clone)]
pub struct Domain {
    dim: usize,
    /// Row-major `dim x dim`, already multiplied by the axis scaling.
    transform: Vec<f64>,
    centers: Vec<Vec<f64>>,
}

impl Domain {
    pub fn new(seed: u64, dim: usize) -> Domain {
        let mut rng = substream(seed, "domain", 0);
        let q = random_orthonormal_rows(&mut rng, dim, dim);
        let scales: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(AXIS_SCALE_RANGE.0..AXIS_SCALE_RANGE.1))
            .collect();
        let mut transform = q;
        for r in 0..dim {
            for c in 0..dim {
                transform[r * dim + c] *= scales[c];
            }
        }
        let centers = (0..MIXTURE_COMPONENTS)
            .map(|_| (0..dim).map(|_| CENTER_SCALE * gauss(&mut rng)).collect())
            .collect();
        Domain {
            dim,
            transform,
            centers,
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let center = &self.centers[rng.random_range(0..self.centers.len())];
        let latent: Vec<f64> = center.iter().map(|c| c + gauss(rng)).collect();
        matvec(&self.transform, self.dim, &latent)
    }
}

/// Points drawn to calibrate teacher biases.
const CALIBRATION_SAMPLES: usize = 8192;
const CALIBRATION_ROUNDS: usize = 300;

/// Linear labelling rule of one concept: `argmax_k (W x + b)_k`.
#[derive(Debug, Clone)]
pub struct Teacher {
    dim: usize,
    classes: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Teacher {
    pub fn new(
        concept_seed: u64,
        variant: u64,
        perturbation: f64,
        classes: usize,
        dim: usize,
    ) -> Teacher {
        let mut rng = substream(concept_seed, "teacher", 0);
        let mut weights = random_orthonormal_rows(&mut rng, classes, dim);
        if variant > 0 && perturbation > 0.0 {
            let mut prng = substream(concept_seed, "teacher-perturbation", variant);
            let noise: Vec<f64> = (0..weights.len()).map(|_| gauss(&mut prng)).collect();
            let base_norm = norm(&weights);
            let scale = perturbation * base_norm / norm(&noise);
            for (w, n) in weights.iter_mut().zip(&noise) {
                *w += scale * n;
            }
        }
        Teacher {
            dim,
            classes,
            weights,
            bias: alloc::vec![0.0; classes],
        }
    }

    /// The teacher of `spec`, with biases balanced on its domain.
    pub fn for_spec(spec: &TaskSpec) -> Teacher {
        let teacher = Teacher::new(
            spec.concept_seed,
            spec.concept_variant,
            spec.concept_perturbation,
            spec.num_classes,
            spec.input_dim,
        );
        teacher.balanced(
            &Domain::new(spec.domain_seed, spec.input_dim),
            spec.domain_seed,
        )
    }

    /// Shifts the biases so every class gets roughly `1/K` of the domain's
    /// mass. Without this the argmax of a bias-free map on an off-centre
    /// mixture is far from balanced.
    pub fn balanced(mut self, domain: &Domain, seed: u64) -> Teacher {
        let mut rng = substream(seed, "teacher-calibration", 0);
        let scores: Vec<Vec<f64>> = (0..CALIBRATION_SAMPLES)
            .map(|_| matvec(&self.weights, self.dim, &domain.sample(&mut rng)))
            .collect();
        let k = self.classes as f64;
        let spread = libm::sqrt(
            scores.iter().flatten().map(|v| v * v).sum::<f64>() / (scores.len() as f64 * k),
        );
        let mut bias = alloc::vec![0.0; self.classes];
        let mut counts = alloc::vec![0usize; self.classes];
        for round in 0..CALIBRATION_ROUNDS {
            counts.iter_mut().for_each(|c| *c = 0);
            for s in &scores {
                let shifted: Vec<f64> = s.iter().zip(&bias).map(|(a, b)| a + b).collect();
                counts[argmax(&shifted)] += 1;
            }
            let step = spread / (1.0 + round as f64 / 30.0);
            for (b, &c) in bias.iter_mut().zip(&counts) {
                *b += step * (1.0 / k - c as f64 / scores.len() as f64);
            }
        }
        self.bias = bias;
        self
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Noiseless label; ties go to the lowest class index.
    pub fn label(&self, x: &[f64]) -> usize {
        let mut scores = matvec(&self.weights, self.dim, x);
        scores.iter_mut().zip(&self.bias).for_each(|(s, b)| *s += b);
        argmax(&scores[..self.classes])
    }
}

pub fn materialize(spec: &TaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let domain = Domain::new(spec.domain_seed, spec.input_dim);
    let teacher = Teacher::for_spec(spec);
    let split = |name: &str, n: usize| -> Vec<Example> {
        let mut rng = substream(spec.data_seed, name, 0);
        (0..n)
            .map(|_| {
                let features = domain.sample(&mut rng);
                let mut label = teacher.label(&features);
                if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
                    let shift = rng.random_range(1..spec.num_classes);
                    label = (label + shift) % spec.num_classes;
                }
                Example { features, label }
            })
            .collect()
    };
    Ok(Dataset {
        spec: spec.clone(),
        train: split("train", spec.train_size),
        val: split("val", spec.val_size),
        test: split("test", spec.test_size),
    })
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn gauss(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

fn matvec(m: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    m.chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `rows x cols` matrix with orthonormal rows (Gram-Schmidt on Gaussians).
fn random_orthonormal_rows(rng: &mut StreamRng, rows: usize, cols: usize) -> Vec<f64> {
    debug_assert!(rows <= cols);
    let mut out: Vec<f64> = Vec::with_capacity(rows * cols);
    while out.len() < rows * cols {
        let mut v: Vec<f64> = (0..cols).map(|_| gauss(rng)).collect();
        for prev in out.chunks_exact(cols) {
            let dot: f64 = prev.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(prev).for_each(|(x, p)| *x -= dot * p);
        }
        let n = norm(&v);
        if n > 1e-8 {
            out.extend(v.iter().map(|x| x / n));
        }
    }
    out
}
