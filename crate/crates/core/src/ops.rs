//! The primitive operation set shared by the eager and recording backends.
//!
//! Layers are written once against [`Ops`]; running them with [`Eager`]
//! computes plain tensors, running them on a [`crate::autodiff::Tape`]
//! records the graph for reverse-mode gradients.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{self, BinaryOp, ConvSpec, Element, ReduceMode, Tensor, UnaryOp};

pub trait Ops<T: Element> {
    type V: Clone;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T>;
    fn constant(&mut self, t: Tensor<T>) -> Self::V;

    /// `out[i] = x[index[i]]`, reshaped to `shape`.
    fn gather(&mut self, x: &Self::V, index: Arc<[usize]>, shape: &[usize]) -> Result<Self::V>;
    fn reshape(&mut self, x: &Self::V, shape: &[usize]) -> Result<Self::V>;
    fn conv2d(&mut self, x: &Self::V, w: &Self::V, spec: ConvSpec) -> Result<Self::V>;
    fn binary(&mut self, a: &Self::V, b: &Self::V, op: BinaryOp) -> Result<Self::V>;
    fn unary(&mut self, x: &Self::V, op: UnaryOp) -> Result<Self::V>;
    /// Reduced axes are kept with extent 1.
    fn reduce(&mut self, x: &Self::V, axes: &[usize], mode: ReduceMode) -> Result<Self::V>;
    fn max_pool2d(&mut self, x: &Self::V, window: usize, stride: usize) -> Result<Self::V>;
    fn concat(&mut self, xs: &[&Self::V], axis: usize) -> Result<Self::V>;
    /// Mean negative log-likelihood of `labels` under `softmax(logits)`;
    /// `logits` is `[N, K]`. Returns a one-element tensor.
    fn cross_entropy(&mut self, logits: &Self::V, labels: &[usize]) -> Result<Self::V>;

    fn shape(&self, v: &Self::V) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.binary(a, b, BinaryOp::Add)
    }

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.binary(a, b, BinaryOp::Sub)
    }

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.binary(a, b, BinaryOp::Mul)
    }

    fn relu(&mut self, x: &Self::V) -> Result<Self::V> {
        self.unary(x, UnaryOp::Relu)
    }

    fn sigmoid(&mut self, x: &Self::V) -> Result<Self::V> {
        self.unary(x, UnaryOp::Sigmoid)
    }

    fn affine(&mut self, x: &Self::V, scale: f64, shift: f64) -> Result<Self::V> {
        self.unary(x, UnaryOp::Affine { scale, shift })
    }

    fn sum(&mut self, x: &Self::V, axes: &[usize]) -> Result<Self::V> {
        self.reduce(x, axes, ReduceMode::Sum)
    }

    fn mean(&mut self, x: &Self::V, axes: &[usize]) -> Result<Self::V> {
        self.reduce(x, axes, ReduceMode::Mean)
    }

    fn max(&mut self, x: &Self::V, axes: &[usize]) -> Result<Self::V> {
        self.reduce(x, axes, ReduceMode::Max)
    }

    fn permute(&mut self, x: &Self::V, perm: &[usize]) -> Result<Self::V> {
        let shape = self.shape(x);
        let index = tensor::permute_index(&shape, perm)?;
        let out: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        self.gather(x, index.into(), &out)
    }

    /// Sum of every element, as a one-element tensor.
    fn sum_all(&mut self, x: &Self::V) -> Result<Self::V> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        let s = self.sum(x, &axes)?;
        self.reshape(&s, &[1])
    }
}

/// Runs operations immediately on tensors.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Element> Ops<T> for Eager {
    type V = Tensor<T>;

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn constant(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn gather(&mut self, x: &Tensor<T>, index: Arc<[usize]>, shape: &[usize]) -> Result<Tensor<T>> {
        x.gather(&index, shape)
    }

    fn reshape(&mut self, x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        x.reshape(shape)
    }

    fn conv2d(&mut self, x: &Tensor<T>, w: &Tensor<T>, spec: ConvSpec) -> Result<Tensor<T>> {
        tensor::conv2d(x, w, spec)
    }

    fn binary(&mut self, a: &Tensor<T>, b: &Tensor<T>, op: BinaryOp) -> Result<Tensor<T>> {
        a.binary(b, op)
    }

    fn unary(&mut self, x: &Tensor<T>, op: UnaryOp) -> Result<Tensor<T>> {
        Ok(x.unary(op))
    }

    fn reduce(&mut self, x: &Tensor<T>, axes: &[usize], mode: ReduceMode) -> Result<Tensor<T>> {
        Ok(tensor::reduce(x, axes, mode)?.values)
    }

    fn max_pool2d(&mut self, x: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
        Ok(tensor::max_pool2d(x, window, stride)?.0)
    }

    fn concat(&mut self, xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        Tensor::concat(xs, axis)
    }

    fn cross_entropy(&mut self, logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
        Ok(softmax_cross_entropy(logits, labels)?.0)
    }
}

/// Returns the mean loss and the row-wise softmax.
pub(crate) fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::shape(format!(
            "cross entropy expects [N,K] logits for {} labels, got {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    let k = logits.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = Vec::with_capacity(logits.len());
    let mut loss = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let z = row.iter().fold(T::zero(), |a, &b| a + (b - m).exp());
        loss = loss + (z.ln() + m - row[label]);
        probs.extend(row.iter().map(|&v| (v - m).exp() / z));
    }
    let n = T::from_f64(labels.len() as f64);
    Ok((Tensor::scalar(loss / n), Tensor::from_parts(logits.shape().to_vec(), probs)))
}
