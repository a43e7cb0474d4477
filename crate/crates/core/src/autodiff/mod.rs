//! Reverse-mode differentiation, parameters and optimizers.
//!
//! Randomness (dropout masks, initialization, data shuffling) comes from
//! ChaCha8 seeded through `rand_chacha`, a counter-based stream that yields
//! the same sequence on every platform.

mod optim;
mod tape;

pub use optim::{OptimizerKind, OptimizerState};
pub use tape::{Gradients, Tape, Var};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::Ops;
use crate::tensor::{Element, Tensor};

/// Seeded generator used throughout the crate.
pub type Rng64 = ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Whether weight decay applies (biases are usually exempt).
    pub decay: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.into(), value, grad, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape(format!("expected {} parameters, got {}", self.params.len(), values.len())));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::shape(format!("parameter {} has shape {:?}, got {:?}", p.name, p.value.shape(), v.shape())));
            }
            p.value = v;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Puts every parameter on the tape as a differentiable leaf.
    pub fn leaves(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Eager copies of the parameter values, for forward passes without a tape.
    pub fn eager(&self) -> Vec<Tensor<T>> {
        self.values()
    }

    /// Adds the gradients of `vars` (as returned by [`Self::leaves`]).
    pub fn accumulate(&mut self, grads: &Gradients<T>, vars: &[Var]) -> Result<()> {
        for (p, v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = grads.get(*v) {
                p.grad = p.grad.add(g)?;
            }
        }
        Ok(())
    }
}

/// Central differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every
/// coordinate of every parameter.
pub fn finite_diff_grad<F>(mut f: F, params: &[Tensor<f64>], step: f64) -> Result<Vec<Tensor<f64>>>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Vec::with_capacity(params[p].len());
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let up = f(&work)?;
            work[p].data_mut()[i] = orig - step;
            let down = f(&work)?;
            work[p].data_mut()[i] = orig;
            g.push((up - down) / (2.0 * step));
        }
        out.push(Tensor::new(params[p].shape(), g)?);
    }
    Ok(out)
}

/// `max |a - b| / max(1, |a|, |b|)` over all coordinates.
pub fn max_relative_error(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&x, &y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

/// Inverted-dropout keep mask scaled by `1 / (1 - rate)`.
pub fn dropout_mask<T: Element>(shape: &[usize], rate: f64, rng: &mut Rng64) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    Ok(Tensor::from_fn(shape, |_| if rng.random::<f64>() < rate { T::zero() } else { keep }))
}

/// Identity at evaluation time or with `rate == 0`.
pub fn dropout<T: Element, O: Ops<T>>(
    ops: &mut O,
    x: &O::V,
    rate: f64,
    rng: &mut Rng64,
    training: bool,
) -> Result<O::V> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(&ops.shape(x), rate, rng)?;
    let m = ops.constant(mask);
    ops.mul(x, &m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Eager;
    use rand::SeedableRng;

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::from_f64_slice(&[3], &[0.5, -2.0, 3.0]).unwrap();
        let g = finite_diff_grad(|p| Ok(0.5 * p[0].data().iter().map(|v| v * v).sum::<f64>()), std::slice::from_ref(&x), 1e-5).unwrap();
        assert!(max_relative_error(&g, &[x]) <= 1e-9);
        let c = finite_diff_grad(|_| Ok(4.0), &[Tensor::zeros(&[2])], 1e-5).unwrap();
        assert_eq!(c[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = Rng64::seed_from_u64(0);
        let x = Tensor::<f64>::from_fn(&[4, 5], |i| i[0] as f64 - i[1] as f64);
        assert_eq!(dropout(&mut Eager, &x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(dropout(&mut Eager, &x, 0.3, &mut rng, false).unwrap(), x);
        assert!(dropout(&mut Eager, &x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = Rng64::seed_from_u64(7);
        let x = Tensor::<f64>::full(&[10_000], 2.0);
        let y = dropout(&mut Eager, &x, 0.3, &mut rng, true).unwrap();
        let mean = y.sum_all() / 10_000.0;
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "{mean}");
    }
}
