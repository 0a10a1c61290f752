//! A one-hidden-layer tanh classifier with hand-written backprop.
//!
//! ```text
//! logits = l2.w · tanh(l1.w · x + l1.b) + l2.b
//! ```
//!
//! Parameters travel as [`Checkpoint`]s with exactly four tensors:
//! `l1.w [h, d]`, `l1.b [h]`, `l2.w [K, h]`, `l2.b [K]`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{meta, Checkpoint, Tensor};
use crate::error::{bail, Error, Result};
use crate::rng::substream;
use crate::tasks::{argmax, Example};

pub const L1_W: &str = "l1.w";
pub const L1_B: &str = "l1.b";
pub const L2_W: &str = "l2.w";
pub const L2_B: &str = "l2.b";

pub const DEFAULT_HIDDEN_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: crate::tasks::DEFAULT_INPUT_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            num_classes: crate::tasks::DEFAULT_NUM_CLASSES,
        }
    }
}

impl ModelConfig {
    pub fn architecture_id(&self) -> String {
        format!(
            "mlp-tanh-{}-{}-{}",
            self.input_dim, self.hidden_dim, self.num_classes
        )
    }

    /// Recovers the configuration from tensor shapes.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<ModelConfig> {
        let shape = |name: &str| {
            ckpt.get(name)
                .map(|t| t.shape())
                .ok_or_else(|| Error::Alignment(format!("missing tensor `{}`", name)))
        };
        let (w1, w2) = (shape(L1_W)?, shape(L2_W)?);
        if w1.len() != 2 || w2.len() != 2 {
            bail!(Alignment, "weight tensors must be rank 2");
        }
        let cfg = ModelConfig {
            input_dim: w1[1],
            hidden_dim: w1[0],
            num_classes: w2[0],
        };
        cfg.check(ckpt)?;
        Ok(cfg)
    }

    fn shapes(&self) -> [(&'static str, Vec<usize>); 4] {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.num_classes);
        [
            (L1_B, vec![h]),
            (L1_W, vec![h, d]),
            (L2_B, vec![k]),
            (L2_W, vec![k, h]),
        ]
    }

    pub fn check(&self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.len() != 4 {
            bail!(
                Alignment,
                "expected 4 parameter tensors, found {}",
                ckpt.len()
            );
        }
        for (name, shape) in self.shapes() {
            match ckpt.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => bail!(
                    Alignment,
                    "`{}` has shape {:?}, expected {:?}",
                    name,
                    t.shape(),
                    shape
                ),
                None => bail!(Alignment, "missing tensor `{}`", name),
            }
        }
        Ok(())
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every tensor.
    pub fn init(&self, seed: u64) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for (name, shape) in self.shapes() {
            let fan_in = if name.starts_with("l1") {
                self.input_dim
            } else {
                self.hidden_dim
            };
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let mut rng = substream(seed, "init", name_index(name));
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            ckpt.insert(name, Tensor::from_f64(shape, data).unwrap())
                .unwrap();
        }
        ckpt.set_meta(meta::ARCH, self.architecture_id());
        ckpt
    }
}

fn name_index(name: &str) -> u64 {
    match name {
        L1_W => 0,
        L1_B => 1,
        L2_W => 2,
        _ => 3,
    }
}

/// Flat parameter buffers, used on the hot path of training.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    pub cfg: ModelConfig,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// `[B, h]` tanh outputs.
    pub hidden: Vec<f64>,
}

impl Mlp {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Mlp> {
        let cfg = ModelConfig::from_checkpoint(ckpt)?;
        let get = |n: &str| ckpt.get(n).unwrap().data().to_vec();
        Ok(Mlp {
            cfg,
            w1: get(L1_W),
            b1: get(L1_B),
            w2: get(L2_W),
            b2: get(L2_B),
        })
    }

    pub fn zeros(cfg: ModelConfig) -> Mlp {
        let (d, h, k) = (cfg.input_dim, cfg.hidden_dim, cfg.num_classes);
        Mlp {
            cfg,
            w1: vec![0.0; h * d],
            b1: vec![0.0; h],
            w2: vec![0.0; k * h],
            b2: vec![0.0; k],
        }
    }

    /// Writes the values into a checkpoint with the layout (dtype, meta) of
    /// `like`.
    pub fn to_checkpoint(&self, like: &Checkpoint) -> Result<Checkpoint> {
        let mut out = like.map_tensors(|name, _| {
            Ok(match name {
                L1_W => self.w1.clone(),
                L1_B => self.b1.clone(),
                L2_W => self.w2.clone(),
                _ => self.b2.clone(),
            })
        })?;
        for (k, v) in like.meta() {
            out.set_meta(k.clone(), v.clone());
        }
        Ok(out)
    }

    pub fn buffers_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn buffers(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cfg.input_dim {
            bail!(
                Alignment,
                "input has {} features, model expects {}",
                x.len(),
                self.cfg.input_dim
            );
        }
        Ok(())
    }

    /// Logits for one example; `hidden` receives the tanh activations.
    #[inline]
    fn forward_one(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let d = self.cfg.input_dim;
        let h = self.cfg.hidden_dim;
        for (j, out) in hidden.iter_mut().enumerate() {
            let row = &self.w1[j * d..(j + 1) * d];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[j];
            *out = libm::tanh(z);
        }
        for (k, out) in logits.iter_mut().enumerate() {
            let row = &self.w2[k * h..(k + 1) * h];
            *out = row
                .iter()
                .zip(hidden.iter())
                .map(|(w, a)| w * a)
                .sum::<f64>()
                + self.b2[k];
        }
    }

    pub fn forward(&self, batch: &[&[f64]]) -> Result<(Vec<f64>, ForwardCache)> {
        let (h, k) = (self.cfg.hidden_dim, self.cfg.num_classes);
        let mut hidden = vec![0.0; batch.len() * h];
        let mut logits = vec![0.0; batch.len() * k];
        for (i, x) in batch.iter().enumerate() {
            self.check_input(x)?;
            self.forward_one(
                x,
                &mut hidden[i * h..(i + 1) * h],
                &mut logits[i * k..(i + 1) * k],
            );
        }
        Ok((logits, ForwardCache { hidden }))
    }

    /// Mean cross-entropy over `batch`; accumulates the gradient into `grad`
    /// (which is overwritten).
    pub fn loss_and_grad(&self, batch: &[&Example], grad: &mut Mlp) -> Result<f64> {
        let (d, h, k) = (
            self.cfg.input_dim,
            self.cfg.hidden_dim,
            self.cfg.num_classes,
        );
        if batch.is_empty() {
            bail!(Data, "empty batch");
        }
        for buf in grad.buffers_mut() {
            buf.iter_mut().for_each(|g| *g = 0.0);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut hidden = vec![0.0; h];
        let mut logits = vec![0.0; k];
        let mut dlogits = vec![0.0; k];
        let mut dhidden = vec![0.0; h];
        let mut total = 0.0;
        for ex in batch {
            self.check_input(&ex.features)?;
            if ex.label >= k {
                bail!(Data, "label {} out of range for {} classes", ex.label, k);
            }
            self.forward_one(&ex.features, &mut hidden, &mut logits);
            let lse = log_sum_exp(&logits);
            total += lse - logits[ex.label];
            for c in 0..k {
                let p = libm::exp(logits[c] - lse);
                dlogits[c] = scale * (p - if c == ex.label { 1.0 } else { 0.0 });
            }
            dhidden.iter_mut().for_each(|v| *v = 0.0);
            for (c, &g) in dlogits.iter().enumerate() {
                grad.b2[c] += g;
                let row = &self.w2[c * h..(c + 1) * h];
                let grow = &mut grad.w2[c * h..(c + 1) * h];
                for j in 0..h {
                    grow[j] += g * hidden[j];
                    dhidden[j] += g * row[j];
                }
            }
            for j in 0..h {
                let dz = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
                grad.b1[j] += dz;
                let grow = &mut grad.w1[j * d..(j + 1) * d];
                for (g, x) in grow.iter_mut().zip(&ex.features) {
                    *g += dz * x;
                }
            }
        }
        Ok(total * scale)
    }

    pub fn predict(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) -> usize {
        self.forward_one(x, hidden, logits);
        argmax(logits)
    }

    pub fn accuracy(&self, split: &[Example]) -> Result<f64> {
        if split.is_empty() {
            bail!(Data, "cannot evaluate on an empty split");
        }
        let mut hidden = vec![0.0; self.cfg.hidden_dim];
        let mut logits = vec![0.0; self.cfg.num_classes];
        let mut correct = 0usize;
        for ex in split {
            self.check_input(&ex.features)?;
            if self.predict(&ex.features, &mut hidden, &mut logits) == ex.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / split.len() as f64)
    }

    pub fn mean_loss(&self, split: &[Example]) -> Result<f64> {
        if split.is_empty() {
            bail!(Data, "cannot evaluate on an empty split");
        }
        let k = self.cfg.num_classes;
        let mut hidden = vec![0.0; self.cfg.hidden_dim];
        let mut logits = vec![0.0; k];
        let mut total = 0.0;
        for ex in split {
            self.check_input(&ex.features)?;
            if ex.label >= k {
                bail!(Data, "label {} out of range for {} classes", ex.label, k);
            }
            self.forward_one(&ex.features, &mut hidden, &mut logits);
            total += log_sum_exp(&logits) - logits[ex.label];
        }
        Ok(total / split.len() as f64)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum())
}

/// Logits `[B, K]` (row-major) and the cached hidden activations.
pub fn forward(ckpt: &Checkpoint, batch: &[&[f64]]) -> Result<(Vec<f64>, ForwardCache)> {
    Mlp::from_checkpoint(ckpt)?.forward(batch)
}

/// Mean softmax cross-entropy and its exact gradient, as a checkpoint
/// aligned with `ckpt`.
pub fn loss_and_grad(ckpt: &Checkpoint, batch: &[Example]) -> Result<(f64, Checkpoint)> {
    let model = Mlp::from_checkpoint(ckpt)?;
    let refs: Vec<&Example> = batch.iter().collect();
    let mut grad = Mlp::zeros(model.cfg);
    let loss = model.loss_and_grad(&refs, &mut grad)?;
    let mut g = grad.to_checkpoint(ckpt)?;
    g.clear_meta();
    Ok((loss, g))
}

/// Fraction of examples whose argmax logit (lowest index on ties) is the label.
pub fn evaluate(ckpt: &Checkpoint, split: &[Example]) -> Result<f64> {
    Mlp::from_checkpoint(ckpt)?.accuracy(split)
}

pub fn mean_loss(ckpt: &Checkpoint, split: &[Example]) -> Result<f64> {
    Mlp::from_checkpoint(ckpt)?.mean_loss(split)
}

/// A checkpoint for `cfg` with every parameter set to `value`.
pub fn constant_checkpoint(cfg: &ModelConfig, value: f64) -> Checkpoint {
    let mut c = cfg.init(0);
    c = c.map_tensors(|_, t| Ok(vec![value; t.len()])).unwrap();
    c
}
