use super::{Element, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

/// Flat input offset of the winning element for every pooled output.
pub type PoolIndex = Vec<usize>;

fn plane_dims<T: Element>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let r = x.rank();
    if r < 2 {
        return Err(Error::shape("spatial op needs at least two axes"));
    }
    let (y, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    Ok((x.len() / (y * w), y, w))
}

/// Max pooling over the two trailing axes without padding. Ties go to the
/// lowest index in row-major window order.
pub fn max_pool2d<T: Element>(x: &Tensor<T>, window: usize, stride: usize) -> Result<(Tensor<T>, PoolIndex)> {
    let (planes, y, w) = plane_dims(x)?;
    if window == 0 || stride == 0 {
        return Err(Error::invalid("pool window and stride must be positive"));
    }
    if window > y || window > w {
        return Err(Error::shape(format!("pool window {window} larger than {y}x{w}")));
    }
    let (oy, ox) = ((y - window) / stride + 1, (w - window) / stride + 1);
    let mut arg = vec![0usize; planes * oy * ox];
    let data = x.data();
    parallel::for_each_chunk(&mut arg, oy * ox, |p, out| {
        let base = p * y * w;
        for i in 0..oy {
            for j in 0..ox {
                let mut best = base + i * stride * w + j * stride;
                for a in 0..window {
                    for b in 0..window {
                        let o = base + (i * stride + a) * w + j * stride + b;
                        if data[o] > data[best] {
                            best = o;
                        }
                    }
                }
                out[i * ox + j] = best;
            }
        }
    });
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oy;
    shape[r - 1] = ox;
    let values = arg.iter().map(|&i| data[i]).collect();
    Ok((Tensor::from_parts(shape, values), arg))
}

pub fn max_pool2d_backward<T: Element>(grad_out: &Tensor<T>, input_shape: &[usize], index: &[usize]) -> Tensor<T> {
    let mut g = vec![T::zero(); input_shape.iter().product()];
    for (&i, &v) in index.iter().zip(grad_out.data()) {
        g[i] = g[i] + v;
    }
    Tensor::from_parts(input_shape.to_vec(), g)
}

pub fn upsample_nearest<T: Element>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (planes, y, w) = plane_dims(x)?;
    if factor == 0 {
        return Err(Error::invalid("upsample factor must be positive"));
    }
    let (ny, nx) = (y * factor, w * factor);
    let mut out = Vec::with_capacity(planes * ny * nx);
    for p in 0..planes {
        for i in 0..ny {
            for j in 0..nx {
                out.push(x.data()[p * y * w + (i / factor) * w + j / factor]);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = ny;
    shape[r - 1] = nx;
    Ok(Tensor::from_parts(shape, out))
}

pub fn pad_zero<T: Element>(x: &Tensor<T>, amount: usize) -> Result<Tensor<T>> {
    let (planes, y, w) = plane_dims(x)?;
    let (ny, nx) = (y + 2 * amount, w + 2 * amount);
    let mut out = vec![T::zero(); planes * ny * nx];
    for p in 0..planes {
        for i in 0..y {
            let dst = p * ny * nx + (i + amount) * nx + amount;
            out[dst..dst + w].copy_from_slice(&x.data()[p * y * w + i * w..][..w]);
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = ny;
    shape[r - 1] = nx;
    Ok(Tensor::from_parts(shape, out))
}
