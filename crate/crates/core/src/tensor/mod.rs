//! Dense row-major arrays and the numeric kernels the rest of the crate is
//! built from.
//!
//! Every kernel accumulates in a fixed index order, so results are
//! bit-reproducible for a given input no matter how many threads run them.

mod conv;
mod elementwise;
mod pool;
mod reduce;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

pub use conv::{conv2d, conv2d_backward_input, conv2d_backward_weight, ConvSpec, Padding};
pub use elementwise::{broadcast_shape, BinaryOp, UnaryOp};
pub use pool::{max_pool2d, max_pool2d_backward, pad_zero, upsample_nearest, PoolIndex};
pub use reduce::{reduce, reduce_backward, ReduceMode, Reduced};

/// Precision tag carried by checkpoints and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::invalid(format!("unknown dtype `{other}` (expected f32 or f64)"))),
        }
    }
}

/// Floating point element type of a [`Tensor`].
pub trait Element: Float + Default + Debug + Sum + Send + Sync + 'static {
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Panics on an invalid shape; meant for shapes computed internally.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n: usize = shape.iter().product();
        assert!(shape.iter().all(|&d| d > 0), "tensor extents must be positive: {shape:?}");
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let n: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        assert!(shape.iter().all(|&d| d > 0), "tensor extents must be positive: {shape:?}");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .rev()
            .fold((0, 1), |(acc, stride), (&i, &d)| {
                debug_assert!(i < d);
                (acc + i * stride, stride * d)
            })
            .0
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn into_shape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Output element `i` is `self.data[index[i]]`.
    pub fn gather(&self, index: &[usize], shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::shape(format!(
                "gather index of length {} does not fill shape {shape:?}",
                index.len()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= self.len()) {
            return Err(Error::shape(format!("gather index {bad} out of range {}", self.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data: index.iter().map(|&i| self.data[i]).collect() })
    }

    /// Permute axes; `perm[k]` names the source axis of output axis `k`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let index = permute_index(&self.shape, perm)?;
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        self.gather(&index, &shape)
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        if axis >= first.rank() {
            return Err(Error::shape(format!("concat axis {axis} out of range")));
        }
        for p in parts {
            let same = p.rank() == first.rank()
                && p.shape.iter().zip(&first.shape).enumerate().all(|(k, (a, b))| k == axis || a == b);
            if !same {
                return Err(Error::shape(format!(
                    "concat shapes {:?} and {:?} differ off axis {axis}",
                    first.shape, p.shape
                )));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let mut shape = first.shape.clone();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis..].iter().product::<usize>();
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn sum_all(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "cannot compare {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }

    /// Drops `margin` pixels from every side of the two trailing axes.
    pub fn crop_spatial(&self, margin: usize) -> Result<Self> {
        if margin == 0 {
            return Ok(self.clone());
        }
        let r = self.rank();
        if r < 2 {
            return Err(Error::shape("crop needs at least two axes"));
        }
        let (y, x) = (self.shape[r - 2], self.shape[r - 1]);
        if 2 * margin >= y || 2 * margin >= x {
            return Err(Error::shape(format!("crop margin {margin} too large for {y}x{x}")));
        }
        let (ny, nx) = (y - 2 * margin, x - 2 * margin);
        let planes = self.len() / (y * x);
        let mut data = Vec::with_capacity(planes * ny * nx);
        for p in 0..planes {
            for i in margin..y - margin {
                let row = p * y * x + i * x;
                data.extend_from_slice(&self.data[row + margin..row + x - margin]);
            }
        }
        let mut shape = self.shape.clone();
        shape[r - 2] = ny;
        shape[r - 1] = nx;
        Ok(Tensor { shape, data })
    }

    /// Integer translation of the trailing two axes with zero fill:
    /// `out[i, j] = self[i - dy, j - dx]`.
    pub fn translate_spatial(&self, dy: isize, dx: isize) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::shape("translate needs at least two axes"));
        }
        let (y, x) = (self.shape[r - 2], self.shape[r - 1]);
        let mut out = vec![T::zero(); self.len()];
        for p in 0..self.len() / (y * x) {
            for i in 0..y {
                let si = i as isize - dy;
                if si < 0 || si >= y as isize {
                    continue;
                }
                for j in 0..x {
                    let sj = j as isize - dx;
                    if sj < 0 || sj >= x as isize {
                        continue;
                    }
                    out[p * y * x + i * x + j] = self.data[p * y * x + si as usize * x + sj as usize];
                }
            }
        }
        Ok(Tensor { shape: self.shape.clone(), data: out })
    }
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape(format!("tensor extents must be positive, got {shape:?}")));
    }
    Ok(())
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// Row-major multi-index increment; wraps to all zeros after the last index.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Source offsets of an axis permutation, in output order.
pub fn permute_index(shape: &[usize], perm: &[usize]) -> Result<Vec<usize>> {
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::shape(format!("{perm:?} is not a permutation of {} axes", shape.len())));
    }
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let n: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(idx.iter().zip(perm).map(|(&i, &p)| i * src_strides[p]).sum());
        increment(&mut idx, &out_shape);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_data() {
        assert!(Tensor::<f64>::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(&[0, 2], vec![]).is_err());
    }

    #[test]
    fn permute_transposes() {
        let t = Tensor::<f64>::from_f64_slice(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let p = t.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn concat_middle_axis() {
        let a = Tensor::<f64>::from_f64_slice(&[2, 1, 2], &[1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::from_f64_slice(&[2, 1, 2], &[5., 6., 7., 8.]).unwrap();
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 2, 2]);
        assert_eq!(c.data(), &[1., 2., 5., 6., 3., 4., 7., 8.]);
    }

    #[test]
    fn crop_and_translate() {
        let t = Tensor::<f64>::from_fn(&[1, 4, 4], |i| (i[1] * 4 + i[2]) as f64);
        let c = t.crop_spatial(1).unwrap();
        assert_eq!(c.data(), &[5., 6., 9., 10.]);
        let s = t.translate_spatial(1, -1).unwrap();
        assert_eq!(s.get(&[0, 1, 0]), 1.0);
        assert_eq!(s.get(&[0, 0, 0]), 0.0);
        assert_eq!(s.get(&[0, 3, 3]), 0.0);
    }
}
