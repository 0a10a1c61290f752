//! AdamW with decoupled weight decay.
//!
//! ```text
//! m = b1 m + (1 - b1) g
//! v = b2 v + (1 - b2) g^2
//! m_hat = m / (1 - b1^t),  v_hat = v / (1 - b2^t)
//! w = w - lr (m_hat / (sqrt(v_hat) + eps) + wd w)
//! ```
//!
//! The decay term scales the weight itself and never enters `m` or `v`.

use alloc::vec::Vec;

use crate::checkpoint::Checkpoint;
use crate::error::{bail, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamW {
    fn from(c: &TrainConfig) -> Self {
        AdamW {
            lr: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.epsilon,
            weight_decay: c.weight_decay,
        }
    }
}

impl AdamW {
    /// Updates one parameter buffer in place. `t` is the 1-based step index.
    pub fn update(&self, t: u64, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let w = params[i];
            params[i] =
                w - self.lr * (m_hat / (libm::sqrt(v_hat) + self.eps) + self.weight_decay * w);
        }
    }
}

/// First and second moment estimates, one buffer per tensor in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn zeros_like(ckpt: &Checkpoint) -> AdamState {
        let m: Vec<Vec<f64>> = ckpt
            .tensors()
            .map(|(_, t)| alloc::vec![0.0; t.len()])
            .collect();
        AdamState { v: m.clone(), m }
    }

    fn matches(&self, ckpt: &Checkpoint) -> bool {
        self.m.len() == ckpt.len()
            && self.v.len() == ckpt.len()
            && ckpt
                .tensors()
                .zip(self.m.iter().zip(&self.v))
                .all(|((_, t), (m, v))| m.len() == t.len() && v.len() == t.len())
    }
}

/// One AdamW step over a whole checkpoint.
pub fn adamw_step(
    ckpt: &Checkpoint,
    grad: &Checkpoint,
    mut state: AdamState,
    t: u64,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, AdamState)> {
    if t < 1 {
        bail!(Config, "step index starts at 1, got {}", t);
    }
    ckpt.check_aligned(grad)?;
    if !state.matches(ckpt) {
        bail!(Alignment, "optimizer state does not match the checkpoint");
    }
    let opt = AdamW::from(cfg);
    let mut i = 0;
    let out = ckpt.map_tensors(|name, t_w| {
        let mut w = t_w.data().to_vec();
        opt.update(
            t,
            &mut w,
            grad.get(name).unwrap().data(),
            &mut state.m[i],
            &mut state.v[i],
        );
        i += 1;
        Ok(w)
    })?;
    let mut out = out;
    for (k, v) in ckpt.meta() {
        out.set_meta(k.clone(), v.clone());
    }
    Ok((out, state))
}
