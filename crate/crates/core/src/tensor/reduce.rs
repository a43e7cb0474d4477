use super::{increment, strides, Element, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceMode {
    Sum,
    Mean,
    Max,
}

/// Result of [`reduce`]: values keep the reduced axes with extent 1.
#[derive(Clone, Debug)]
pub struct Reduced<T> {
    pub values: Tensor<T>,
    /// For `Max`, the flat input offset of each winner (lowest index on ties).
    pub argmax: Option<Vec<usize>>,
}

struct Plan {
    out_shape: Vec<usize>,
    bases: Vec<usize>,
    inner: Vec<usize>,
}

fn plan(shape: &[usize], axes: &[usize]) -> Result<Plan> {
    let mut reduced = vec![false; shape.len()];
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::shape(format!("reduce axis {a} out of range for {shape:?}")));
        }
        reduced[a] = true;
    }
    let st = strides(shape);
    let out_shape: Vec<usize> = shape.iter().zip(&reduced).map(|(&d, &r)| if r { 1 } else { d }).collect();
    let in_shape: Vec<usize> = shape.iter().zip(&reduced).map(|(&d, &r)| if r { d } else { 1 }).collect();
    let offsets = |sh: &[usize]| {
        let n: usize = sh.iter().product();
        let mut idx = vec![0; sh.len()];
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(idx.iter().zip(&st).map(|(i, s)| i * s).sum());
            increment(&mut idx, sh);
        }
        v
    };
    Ok(Plan { bases: offsets(&out_shape), inner: offsets(&in_shape), out_shape })
}

/// Reduces `axes`, visiting reduced elements in increasing index order so
/// the accumulation sequence is fixed.
pub fn reduce<T: Element>(x: &Tensor<T>, axes: &[usize], mode: ReduceMode) -> Result<Reduced<T>> {
    if axes.is_empty() {
        let argmax = (mode == ReduceMode::Max).then(|| (0..x.len()).collect());
        return Ok(Reduced { values: x.clone(), argmax });
    }
    let p = plan(x.shape(), axes)?;
    let data = x.data();
    let count = T::from_f64(p.inner.len() as f64);
    match mode {
        ReduceMode::Sum | ReduceMode::Mean => {
            let mut out = vec![T::zero(); p.bases.len()];
            let chunk = chunk_len(p.inner.len());
            parallel::for_each_chunk(&mut out, chunk, |c, vals| {
                for (k, v) in vals.iter_mut().enumerate() {
                    let base = p.bases[c * chunk + k];
                    let s = p.inner.iter().fold(T::zero(), |acc, &o| acc + data[base + o]);
                    *v = if mode == ReduceMode::Mean { s / count } else { s };
                }
            });
            Ok(Reduced { values: Tensor::from_parts(p.out_shape, out), argmax: None })
        }
        ReduceMode::Max => {
            let mut arg = vec![0usize; p.bases.len()];
            let chunk = chunk_len(p.inner.len());
            parallel::for_each_chunk(&mut arg, chunk, |c, vals| {
                for (k, v) in vals.iter_mut().enumerate() {
                    let base = p.bases[c * chunk + k];
                    let mut best = base + p.inner[0];
                    for &o in &p.inner[1..] {
                        if data[base + o] > data[best] {
                            best = base + o;
                        }
                    }
                    *v = best;
                }
            });
            let out = arg.iter().map(|&i| data[i]).collect();
            Ok(Reduced { values: Tensor::from_parts(p.out_shape, out), argmax: Some(arg) })
        }
    }
}

fn chunk_len(inner: usize) -> usize {
    (16384 / inner.max(1)).max(1)
}

pub fn reduce_backward<T: Element>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    axes: &[usize],
    mode: ReduceMode,
    argmax: Option<&[usize]>,
) -> Result<Tensor<T>> {
    let p = plan(input_shape, axes)?;
    if grad_out.shape() != p.out_shape.as_slice() {
        return Err(Error::shape("reduce gradient shape mismatch"));
    }
    let n: usize = input_shape.iter().product();
    let mut g = vec![T::zero(); n];
    let go = grad_out.data();
    match mode {
        ReduceMode::Sum | ReduceMode::Mean => {
            let scale = if mode == ReduceMode::Mean {
                T::one() / T::from_f64(p.inner.len() as f64)
            } else {
                T::one()
            };
            for (k, &base) in p.bases.iter().enumerate() {
                let v = go[k] * scale;
                for &o in &p.inner {
                    g[base + o] = v;
                }
            }
        }
        ReduceMode::Max => {
            let arg = argmax.ok_or_else(|| Error::invalid("max backward needs argmax"))?;
            for (k, &i) in arg.iter().enumerate() {
                g[i] = g[i] + go[k];
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), g))
}

impl<T: Element> Tensor<T> {
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        Ok(reduce(self, axes, ReduceMode::Sum)?.values)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        Ok(reduce(self, axes, ReduceMode::Mean)?.values)
    }

    pub fn max_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        Ok(reduce(self, axes, ReduceMode::Max)?.values)
    }
}
