use super::{increment, reduce, strides, Element, ReduceMode, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    /// `1 - sigmoid(z)`: the suppression form of a sigmoid gate.
    ResidualGate,
    Neg,
    Square,
    /// `1 / sqrt(x)`
    Rsqrt,
    /// `scale * x + shift`
    Affine { scale: f64, shift: f64 },
}

pub(crate) fn sigmoid<T: Element>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl UnaryOp {
    pub fn apply<T: Element>(self, x: T) -> T {
        match self {
            UnaryOp::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::ResidualGate => T::one() - sigmoid(x),
            UnaryOp::Neg => -x,
            UnaryOp::Square => x * x,
            UnaryOp::Rsqrt => T::one() / x.sqrt(),
            UnaryOp::Affine { scale, shift } => T::from_f64(scale) * x + T::from_f64(shift),
        }
    }

    /// Derivative at input `x` with output `y`. `relu'(0) = 0`.
    pub fn derivative<T: Element>(self, x: T, y: T) -> T {
        match self {
            UnaryOp::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            UnaryOp::Sigmoid => y * (T::one() - y),
            UnaryOp::ResidualGate => -(y * (T::one() - y)),
            UnaryOp::Neg => -T::one(),
            UnaryOp::Square => x + x,
            UnaryOp::Rsqrt => T::from_f64(-0.5) * y * y * y,
            UnaryOp::Affine { scale, .. } => T::from_f64(scale),
        }
    }
}

impl<T: Element> Tensor<T> {
    pub fn unary(&self, op: UnaryOp) -> Tensor<T> {
        self.map(|v| op.apply(v))
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(UnaryOp::Relu)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(UnaryOp::Sigmoid)
    }

    pub fn binary(&self, other: &Tensor<T>, op: BinaryOp) -> Result<Tensor<T>> {
        let f = match op {
            BinaryOp::Add => |a: T, b: T| a + b,
            BinaryOp::Sub => |a: T, b: T| a - b,
            BinaryOp::Mul => |a: T, b: T| a * b,
        };
        broadcast_zip(self, other, f)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryOp::Mul)
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.map(|v| v * s)
    }

    /// Sums away broadcast axes so the result has `shape`; the inverse of
    /// broadcasting `shape` up to `self.shape()`.
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let r = self.rank();
        if shape.len() > r {
            return Err(Error::shape(format!("cannot sum {:?} down to {shape:?}", self.shape())));
        }
        let lead = r - shape.len();
        let mut axes: Vec<usize> = (0..lead).collect();
        for (k, &d) in shape.iter().enumerate() {
            let full = self.shape()[lead + k];
            if d == 1 && full != 1 {
                axes.push(lead + k);
            } else if d != full {
                return Err(Error::shape(format!("cannot sum {:?} down to {shape:?}", self.shape())));
            }
        }
        reduce(self, &axes, ReduceMode::Sum)?.values.into_shape(shape)
    }
}

/// Right-aligned broadcasting of size-1 axes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for k in 0..r {
        let da = if k + a.len() >= r { a[k + a.len() - r] } else { 1 };
        let db = if k + b.len() >= r { b[k + b.len() - r] } else { 1 };
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(format!("shapes {a:?} and {b:?} do not broadcast"))),
        };
    }
    Ok(out)
}

fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let lead = out.len() - shape.len();
    let s = strides(shape);
    (0..out.len())
        .map(|k| if k < lead || shape[k - lead] == 1 { 0 } else { s[k - lead] })
        .collect()
}

fn broadcast_zip<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let (sa, sb) = (broadcast_strides(a.shape(), &shape), broadcast_strides(b.shape(), &shape));
    let n: usize = shape.iter().product();
    let mut idx = vec![0; shape.len()];
    let mut data = Vec::with_capacity(n);
    // the innermost axis is handled as a run to keep the loop tight
    let last = shape.len() - 1;
    let (run, ra, rb) = (shape[last], sa[last], sb[last]);
    for _ in 0..n / run {
        let oa: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ob: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        for t in 0..run {
            data.push(f(a.data()[oa + t * ra], b.data()[ob + t * rb]));
        }
        idx[last] = run - 1;
        increment(&mut idx, &shape);
    }
    Ok(Tensor::from_parts(shape, data))
}
