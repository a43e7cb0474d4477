use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops::{softmax_cross_entropy, Ops};
use crate::tensor::{
    self, conv2d_backward_input, conv2d_backward_weight, max_pool2d_backward, reduce_backward, BinaryOp, ConvSpec,
    Element, ReduceMode, Tensor, UnaryOp,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Gather { x: Var, index: Arc<[usize]> },
    Reshape { x: Var },
    Conv2d { x: Var, w: Var, spec: ConvSpec },
    Binary { a: Var, b: Var, op: BinaryOp },
    Unary { x: Var, op: UnaryOp },
    Reduce { x: Var, axes: Vec<usize>, mode: ReduceMode, argmax: Option<Vec<usize>> },
    MaxPool { x: Var, index: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    CrossEntropy { x: Var, probs: Tensor<T>, labels: Vec<usize> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of executed operations. Nodes are stored in execution
/// order, which is a topological order of the graph.
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients from one [`Tape::backward`] pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (a parameter or anything we want `d loss / d x` for).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse sweep from a one-element `loss`; visits each node once, in
    /// strict reverse execution order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: Tensor<T>| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => *existing = existing.add(&d)?,
                slot @ None => *slot = Some(d),
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf => {}
            Op::Gather { x, index } => {
                let mut d = vec![T::zero(); val(*x).len()];
                for (&i, &v) in index.iter().zip(g.data()) {
                    d[i] = d[i] + v;
                }
                acc(*x, Tensor::from_parts(val(*x).shape().to_vec(), d))?;
            }
            Op::Reshape { x } => acc(*x, g.reshape(val(*x).shape())?)?,
            Op::Conv2d { x, w, spec } => {
                if self.rg(*x) {
                    acc(*x, conv2d_backward_input(g, val(*x).shape(), val(*w), *spec)?)?;
                }
                if self.rg(*w) {
                    acc(*w, conv2d_backward_weight(g, val(*x), val(*w).shape(), *spec)?)?;
                }
            }
            Op::Binary { a, b, op } => {
                let (va, vb) = (val(*a), val(*b));
                let (da, db) = match op {
                    BinaryOp::Add => (g.clone(), g.clone()),
                    BinaryOp::Sub => (g.clone(), g.unary(UnaryOp::Neg)),
                    BinaryOp::Mul => (
                        if self.rg(*a) { g.mul(vb)? } else { g.clone() },
                        if self.rg(*b) { g.mul(va)? } else { g.clone() },
                    ),
                };
                if self.rg(*a) {
                    acc(*a, da.sum_to_shape(va.shape())?)?;
                }
                if self.rg(*b) {
                    acc(*b, db.sum_to_shape(vb.shape())?)?;
                }
            }
            Op::Unary { x, op } => {
                let xv = val(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(g.data())
                    .map(|((&xi, &yi), &gi)| gi * op.derivative(xi, yi))
                    .collect();
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), data))?;
            }
            Op::Reduce { x, axes, mode, argmax } => {
                acc(*x, reduce_backward(g, val(*x).shape(), axes, *mode, argmax.as_deref())?)?;
            }
            Op::MaxPool { x, index } => acc(*x, max_pool2d_backward(g, val(*x).shape(), index))?,
            Op::Concat { xs, axis } => {
                let shape = g.shape();
                let outer: usize = shape[..*axis].iter().product();
                let mut offset = 0;
                for &x in xs {
                    let xs_shape = val(x).shape();
                    let block: usize = xs_shape[*axis..].iter().product();
                    let full: usize = shape[*axis..].iter().product();
                    if self.rg(x) {
                        let mut d = Vec::with_capacity(val(x).len());
                        for o in 0..outer {
                            d.extend_from_slice(&g.data()[o * full + offset..][..block]);
                        }
                        acc(x, Tensor::from_parts(xs_shape.to_vec(), d))?;
                    }
                    offset += block;
                }
            }
            Op::CrossEntropy { x, probs, labels } => {
                let k = probs.shape()[1];
                let scale = g.data()[0] / T::from_f64(labels.len() as f64);
                let mut d = probs.data().to_vec();
                for (n, &l) in labels.iter().enumerate() {
                    d[n * k + l] = d[n * k + l] - T::one();
                }
                d.iter_mut().for_each(|v| *v = *v * scale);
                acc(*x, Tensor::from_parts(probs.shape().to_vec(), d))?;
            }
        }
        Ok(())
    }
}

impl<T: Element> Ops<T> for Tape<T> {
    type V = Var;

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn gather(&mut self, x: &Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.gather(&index, shape)?;
        let rg = self.rg(*x);
        Ok(self.push(value, Op::Gather { x: *x, index }, rg))
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.reshape(shape)?;
        let rg = self.rg(*x);
        Ok(self.push(value, Op::Reshape { x: *x }, rg))
    }

    fn conv2d(&mut self, x: &Var, w: &Var, spec: ConvSpec) -> Result<Var> {
        let value = tensor::conv2d(&self.nodes[x.0].value, &self.nodes[w.0].value, spec)?;
        let rg = self.rg(*x) || self.rg(*w);
        Ok(self.push(value, Op::Conv2d { x: *x, w: *w, spec }, rg))
    }

    fn binary(&mut self, a: &Var, b: &Var, op: BinaryOp) -> Result<Var> {
        let value = self.nodes[a.0].value.binary(&self.nodes[b.0].value, op)?;
        let rg = self.rg(*a) || self.rg(*b);
        Ok(self.push(value, Op::Binary { a: *a, b: *b, op }, rg))
    }

    fn unary(&mut self, x: &Var, op: UnaryOp) -> Result<Var> {
        let value = self.nodes[x.0].value.unary(op);
        let rg = self.rg(*x);
        Ok(self.push(value, Op::Unary { x: *x, op }, rg))
    }

    fn reduce(&mut self, x: &Var, axes: &[usize], mode: ReduceMode) -> Result<Var> {
        let r = tensor::reduce(&self.nodes[x.0].value, axes, mode)?;
        let rg = self.rg(*x);
        Ok(self.push(r.values, Op::Reduce { x: *x, axes: axes.to_vec(), mode, argmax: r.argmax }, rg))
    }

    fn max_pool2d(&mut self, x: &Var, window: usize, stride: usize) -> Result<Var> {
        let (value, index) = tensor::max_pool2d(&self.nodes[x.0].value, window, stride)?;
        let rg = self.rg(*x);
        Ok(self.push(value, Op::MaxPool { x: *x, index }, rg))
    }

    fn concat(&mut self, xs: &[&Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = xs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = Tensor::concat(&parts, axis)?;
        let rg = xs.iter().any(|v| self.rg(**v));
        Ok(self.push(value, Op::Concat { xs: xs.iter().map(|v| **v).collect(), axis }, rg))
    }

    fn cross_entropy(&mut self, logits: &Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = softmax_cross_entropy(&self.nodes[logits.0].value, labels)?;
        let rg = self.rg(*logits);
        Ok(self.push(loss, Op::CrossEntropy { x: *logits, probs, labels: labels.to_vec() }, rg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_gradient_is_input() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::from_f64_slice(&[3], &[0.3, -1.0, 2.0]).unwrap());
        let x = tape.constant(Tensor::from_f64_slice(&[3], &[1.0, 2.0, 3.0]).unwrap());
        let wx = tape.mul(&w, &x).unwrap();
        let loss = tape.sum_all(&wx).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0, 3.0]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::scalar(0.0));
        let s = tape.sigmoid(&z).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(z).unwrap().data(), &[0.25]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::zeros(&[2]));
        assert!(tape.backward(z).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(&x, &x).unwrap();
        let z = tape.add(&y, &x).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0]);
    }
}
