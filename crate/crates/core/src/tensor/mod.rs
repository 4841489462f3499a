//! Dense row-major tensors and the primitive operations used by the student
//! network.
//!
//! A [`Tensor`] owns a contiguous buffer of `product(shape)` elements. Storage
//! is either `f32` or `f16`; half precision is storage-only, so every
//! arithmetic routine reads values through [`Tensor::values`] (which upcasts)
//! and produces an `f32` result. Tensors are immutable once built: all
//! operations return new tensors.

use std::borrow::Cow;
use std::fmt;

use half::f16;

use crate::error::{Error, Result};

mod activation;
mod conv;
mod norm;
mod reduce;
mod shape_ops;
mod upsample;

pub use activation::{relu, sigmoid, silu};
pub use conv::{conv2d, Conv2dParams};
pub use norm::{affine_channels, instance_norm, layer_norm_channels};
pub use reduce::{add, matmul_batched, mul, softmax, sum};
pub use shape_ops::{concat, permute, reshape, split, squeeze, unsqueeze};
pub use upsample::{upsample, UpsampleMode};

/// Largest rank any tensor may have.
pub const MAX_RANK: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F16,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    F32(Vec<f32>),
    F16(Vec<f16>),
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    storage: Storage,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::shape("tensor", format!("rank {} outside 1..={MAX_RANK}", shape.len())));
    }
    if let Some(axis) = shape.iter().position(|&d| d == 0) {
        return Err(Error::shape("tensor", format!("axis {axis} has zero extent in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::shape("tensor", format!("shape {shape:?} needs {n} elements, got {}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), storage: Storage::F32(data) })
    }

    pub fn from_f16(shape: &[usize], data: Vec<f16>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::shape("tensor", format!("shape {shape:?} needs {n} elements, got {}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), storage: Storage::F16(data) })
    }

    pub fn full(shape: &[usize], value: f32) -> Result<Self> {
        let n = check_shape(shape)?;
        Tensor::new(shape, vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Tensor::full(shape, 0.0)
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: vec![1], storage: Storage::F32(vec![value]) }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f32) -> Result<Self> {
        let n = check_shape(shape)?;
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for axis in (0..shape.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < shape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn dtype(&self) -> DType {
        match self.storage {
            Storage::F32(_) => DType::F32,
            Storage::F16(_) => DType::F16,
        }
    }

    /// Element values as `f32`, upcasting half-precision storage.
    pub fn values(&self) -> Cow<'_, [f32]> {
        match &self.storage {
            Storage::F32(v) => Cow::Borrowed(v),
            Storage::F16(v) => Cow::Owned(v.iter().map(|h| h.to_f32()).collect()),
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.storage {
            Storage::F32(v) => Some(v),
            Storage::F16(_) => None,
        }
    }

    pub fn as_f16(&self) -> Option<&[f16]> {
        match &self.storage {
            Storage::F16(v) => Some(v),
            Storage::F32(_) => None,
        }
    }

    pub fn into_values(self) -> Vec<f32> {
        match self.storage {
            Storage::F32(v) => v,
            Storage::F16(v) => v.into_iter().map(|h| h.to_f32()).collect(),
        }
    }

    pub fn to_f16(&self) -> Tensor {
        let data = match &self.storage {
            Storage::F32(v) => v.iter().map(|&x| f16::from_f32(x)).collect(),
            Storage::F16(v) => v.clone(),
        };
        Tensor { shape: self.shape.clone(), storage: Storage::F16(data) }
    }

    pub fn to_f32(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), storage: Storage::F32(self.values().into_owned()) }
    }

    /// Little-endian bytes of the stored elements (f16 stays two bytes each).
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match &self.storage {
            Storage::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Storage::F16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn strides(&self) -> Vec<usize> {
        contiguous_strides(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::shape("index", format!("index rank {} vs tensor rank {}", index.len(), self.rank())));
        }
        let mut off = 0;
        for (axis, (&i, &d)) in index.iter().zip(&self.shape).enumerate() {
            if i >= d {
                return Err(Error::shape("index", format!("axis {axis}: index {i} out of extent {d}")));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f32> {
        let off = self.offset(index)?;
        Ok(match &self.storage {
            Storage::F32(v) => v[off],
            Storage::F16(v) => v[off].to_f32(),
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape.clone(), storage: Storage::F32(self.values().iter().map(|&x| f(x)).collect()) }
    }

    pub fn scale(&self, c: f32) -> Tensor {
        self.map(|x| x * c)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(self.values().iter().zip(other.values().iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max))
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|x| x.is_finite())
    }

    /// Bitwise equality of shape, dtype and payload.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape && self.dtype() == other.dtype() && self.to_le_bytes() == other.to_le_bytes()
    }

    /// Reads channel `c` of a `[C, H, W]` tensor.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        let [ch, h, w] = self.dims3("channel")?;
        if c >= ch {
            return Err(Error::shape("channel", format!("channel {c} >= {ch}")));
        }
        let v = self.values();
        Tensor::new(&[h, w], v[c * h * w..(c + 1) * h * w].to_vec())
    }

    pub(crate) fn dims3(&self, op: &'static str) -> Result<[usize; 3]> {
        match self.shape.as_slice() {
            &[a, b, c] => Ok([a, b, c]),
            s => Err(Error::shape(op, format!("expected rank 3 [C,H,W], got {s:?}"))),
        }
    }

    pub(crate) fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[a, b, c, d] => Ok([a, b, c, d]),
            s => Err(Error::shape(op, format!("expected rank 4, got {s:?}"))),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.values();
        let preview: Vec<f32> = v.iter().take(8).copied().collect();
        f.debug_struct("Tensor").field("shape", &self.shape).field("dtype", &self.dtype()).field("head", &preview).finish()
    }
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[0], vec![]).is_err());
        assert!(Tensor::zeros(&[1, 1, 1, 1, 1, 1, 1]).is_err());
        assert!(Tensor::zeros(&[1, 1, 1, 1, 1, 1]).is_ok());
    }

    #[test]
    fn from_fn_is_row_major() {
        let t = Tensor::from_fn(&[2, 3], |i| (i[0] * 10 + i[1]) as f32).unwrap();
        assert_eq!(t.values().as_ref(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(t.get(&[1, 2]).unwrap(), 12.0);
    }

    #[test]
    fn f16_roundtrip_within_half_ulp() {
        let src: Vec<f32> = (0..200).map(|i| (i as f32 - 100.0) * 0.0371).collect();
        let t = Tensor::new(&[200], src.clone()).unwrap();
        let back = t.to_f16().to_f32();
        for (a, b) in src.iter().zip(back.values().iter()) {
            // half precision: 10 explicit mantissa bits, round-to-nearest
            let bound = a.abs().max(f32::from(f16::MIN_POSITIVE)) * 2f32.powi(-11);
            assert!((a - b).abs() <= bound, "{a} vs {b}");
        }
        assert_eq!(t.to_f16().dtype(), DType::F16);
    }
}
