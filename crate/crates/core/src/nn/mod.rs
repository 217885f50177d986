//! Minimal dense-network toolkit: a flat parameter store, matching gradient
//! buffers, and layers with explicit forward caches and backward passes.
//!
//! Everything is generic over [`Scalar`] so training can run in `f32` while
//! gradient and EMA checks run the same code in `f64`.

mod layers;

pub use layers::{
    gelu, gelu_backward, softmax_rows, Attention, AttentionCache, Block, BlockCache, LayerNorm,
    LayerNormCache, Linear, Transformer, TransformerCache,
};

use crate::error::{Error, Result};
use crate::sampling::TruncatedNormal;
use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Element type tag stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub trait Scalar:
    Float
    + FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn to_f64_lossy(self) -> f64;
    fn write_le(values: &[Self], out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Vec<Self>;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    fn write_le(values: &[Self], out: &mut Vec<u8>) {
        out.reserve(values.len() * 4);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn to_f64_lossy(self) -> f64 {
        self
    }

    fn write_le(values: &[Self], out: &mut Vec<u8>) {
        out.reserve(values.len() * 8);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(index: usize) -> Self {
        ParamId(index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: ArrayD<F>,
    /// Fixed tables (e.g. sinusoidal positions) are not trainable.
    pub trainable: bool,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

/// Named, ordered collection of parameter arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<F>, trainable: bool, decay: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<F> {
        &self.params[id.0].value
    }

    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, F> {
        self.params[id.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("parameter is not a matrix")
    }

    pub fn vector(&self, id: ParamId) -> ArrayView1<'_, F> {
        self.params[id.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("parameter is not a vector")
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zeros_like(&self) -> Grads<F> {
        Grads {
            tensors: self
                .params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect(),
        }
    }

    /// True when both stores hold the same names and shapes in the same order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape("parameter stores have different layouts".into()))
        }
    }

    /// FNV-1a over every parameter's bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        let mut h: u64 = 0xcbf29ce484222325;
        for p in &self.params {
            bytes.clear();
            let owned: Vec<F>;
            let values = match p.value.as_slice_memory_order() {
                Some(v) => v,
                None => {
                    owned = p.value.iter().copied().collect();
                    &owned
                }
            };
            F::write_le(values, &mut bytes);
            for b in p.name.bytes().chain(bytes.iter().copied()) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<F> {
    tensors: Vec<ArrayD<F>>,
}

impl<F: Scalar> Grads<F> {
    pub fn tensors(&self) -> &[ArrayD<F>] {
        &self.tensors
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<F> {
        &self.tensors[id.0]
    }

    pub fn mat_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, F> {
        self.tensors[id.0]
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("gradient is not a matrix")
    }

    pub fn vector_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, F> {
        self.tensors[id.0]
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("gradient is not a vector")
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| {
                let v = v.to_f64_lossy();
                v * v
            })
            .sum()
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(F::zero());
        }
    }

    pub fn scale(&mut self, k: F) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * k);
        }
    }
}

/// Truncated-normal initializer clipped at two standard deviations.
pub fn trunc_normal<F: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> ArrayD<F> {
    let dist = TruncatedNormal::new(0.0, std, -2.0 * std, 2.0 * std);
    ArrayD::from_shape_simple_fn(IxDyn(shape), || F::lit(dist.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn trunc_normal_clips() {
        let a: ArrayD<f64> = trunc_normal(&[100, 100], 0.02, &mut seeded(0));
        assert!(a.iter().all(|v| v.abs() <= 0.04));
        let std = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!(std > 0.015 && std < 0.02);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut s = ParamStore::<f32>::new();
        let id = s.push("w", ArrayD::zeros(IxDyn(&[2, 2])), true, true);
        let c0 = s.checksum();
        s.params_mut()[id.index()].value[[0, 1]] = 1.0;
        assert_ne!(c0, s.checksum());
    }
}
