//! Named-tensor checkpoints and the vector-space arithmetic on them.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

/// Well-known metadata keys. Metadata never takes part in arithmetic.
pub mod meta {
    pub const ARCH: &str = "arch";
    pub const TASK_ID: &str = "task_id";
    pub const TRAIN_SIZE: &str = "train_size";
    pub const SEED: &str = "seed";
    pub const FUSED_FROM: &str = "fused_from";
}

/// Storage element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    /// Rounds a value to what this dtype can store.
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::F64 => v,
        }
    }
}

/// Dense row-major tensor. Values are held as `f64`; for `F32` tensors every
/// value is exactly representable in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dtype: DType, shape: Vec<usize>, mut data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            bail!(Data, "tensor dimensions must be >= 1, got {:?}", shape);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Data("tensor shape overflows".to_string()))?;
        if numel != data.len() {
            bail!(
                Data,
                "shape {:?} needs {} elements, got {}",
                shape,
                numel,
                data.len()
            );
        }
        for v in data.iter_mut() {
            *v = dtype.round(*v);
            if !v.is_finite() {
                bail!(Data, "tensor contains a non-finite value");
            }
        }
        Ok(Tensor { dtype, shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(DType::F64, shape, data)
    }

    pub fn from_f32(shape: Vec<usize>, data: &[f32]) -> Result<Self> {
        Self::new(DType::F32, shape, data.iter().map(|&v| v as f64).collect())
    }

    pub fn zeros(dtype: DType, shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(dtype, shape, alloc::vec![0.0; n])
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_layout(&self, other: &Tensor) -> bool {
        self.dtype == other.dtype && self.shape == other.shape
    }

    /// Builds a tensor with this layout from freshly computed values.
    pub(crate) fn with_values(&self, data: Vec<f64>) -> Result<Tensor> {
        debug_assert_eq!(data.len(), self.data.len());
        Tensor::new(self.dtype, self.shape.clone(), data)
    }
}

/// An ordered map of parameter tensors plus free-form metadata.
///
/// Iteration follows the byte order of tensor names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Tensor>,
    meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            bail!(Config, "tensor names must be non-empty");
        }
        if self.tensors.contains_key(&name) {
            bail!(Config, "duplicate tensor name `{}`", name);
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn with_tensor(mut self, name: impl Into<String>, tensor: Tensor) -> Result<Self> {
        self.insert(name, tensor)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn clear_meta(&mut self) {
        self.meta.clear();
    }

    /// Same names, and per name the same shape and dtype.
    pub fn is_aligned_with(&self, other: &Checkpoint) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.same_layout(tb))
    }

    pub fn check_aligned(&self, other: &Checkpoint) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            bail!(
                Alignment,
                "tensor counts differ ({} vs {})",
                self.tensors.len(),
                other.tensors.len()
            );
        }
        for ((na, ta), (nb, tb)) in self.tensors.iter().zip(other.tensors.iter()) {
            if na != nb {
                bail!(Alignment, "tensor names differ (`{}` vs `{}`)", na, nb);
            }
            if !ta.same_layout(tb) {
                bail!(
                    Alignment,
                    "`{}` has {:?}{:?} vs {:?}{:?}",
                    na,
                    ta.dtype,
                    ta.shape,
                    tb.dtype,
                    tb.shape
                );
            }
        }
        Ok(())
    }

    /// Copies the architecture id (and nothing else) from `self` into `out`.
    pub(crate) fn carry_arch(&self, out: &mut Checkpoint) {
        if let Some(arch) = self.meta.get(meta::ARCH) {
            out.meta.insert(meta::ARCH.to_string(), arch.clone());
        }
    }

    /// Builds an aligned checkpoint by computing each tensor's values from the
    /// corresponding tensor of `self`. Metadata keeps only the architecture id.
    pub fn map_tensors<F>(&self, mut f: F) -> Result<Checkpoint>
    where
        F: FnMut(&str, &Tensor) -> Result<Vec<f64>>,
    {
        let mut out = Checkpoint::new();
        for (name, t) in &self.tensors {
            let values = f(name, t)?;
            out.tensors.insert(name.clone(), t.with_values(values)?);
        }
        self.carry_arch(&mut out);
        Ok(out)
    }

    pub fn zeros_like(&self) -> Checkpoint {
        self.map_tensors(|_, t| Ok(alloc::vec![0.0; t.len()]))
            .expect("zeros are always valid")
    }

    pub fn scale(&self, alpha: f64) -> Result<Checkpoint> {
        self.map_tensors(|_, t| Ok(t.data().iter().map(|v| alpha * v).collect()))
    }

    /// Euclidean norm over every element of every tensor.
    pub fn l2_norm(&self) -> f64 {
        let sq: f64 = self
            .tensors
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum();
        libm::sqrt(sq)
    }

    /// All values concatenated in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// `alpha * a + b`, elementwise.
pub fn axpy(alpha: f64, a: &Checkpoint, b: &Checkpoint) -> Result<Checkpoint> {
    a.check_aligned(b)?;
    a.map_tensors(|name, ta| {
        let tb = &b.tensors[name];
        Ok(ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| alpha * x + y)
            .collect())
    })
}

pub fn l2_distance(a: &Checkpoint, b: &Checkpoint) -> Result<f64> {
    a.check_aligned(b)?;
    let mut sq = 0.0;
    for (name, ta) in &a.tensors {
        let tb = &b.tensors[name];
        for (x, y) in ta.data().iter().zip(tb.data()) {
            let d = x - y;
            sq += d * d;
        }
    }
    Ok(libm::sqrt(sq))
}
