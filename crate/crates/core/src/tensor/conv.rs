use super::{Element, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding; output extent `ceil(n / stride)`.
    Same,
    /// No padding; output extent `(n - k) / stride + 1`.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: Padding,
    /// Input and output channels are split into this many independent blocks.
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec { stride: 1, padding: Padding::Same, groups: 1 }
    }
}

impl ConvSpec {
    pub fn same() -> Self {
        Self::default()
    }

    pub fn valid() -> Self {
        ConvSpec { padding: Padding::Valid, ..Self::default() }
    }

    pub fn with_stride(self, stride: usize) -> Self {
        ConvSpec { stride, ..self }
    }

    pub fn with_groups(self, groups: usize) -> Self {
        ConvSpec { groups, ..self }
    }

    /// Output extent and leading pad for an input extent `n` and kernel `k`.
    pub fn geometry(&self, n: usize, k: usize) -> Result<(usize, usize)> {
        if self.stride < 1 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        match self.padding {
            Padding::Same => {
                let out = n.div_ceil(self.stride);
                let total = ((out - 1) * self.stride + k).saturating_sub(n);
                Ok((out, total / 2))
            }
            Padding::Valid => {
                if n < k {
                    return Err(Error::shape(format!("valid convolution of extent {n} with kernel {k}")));
                }
                Ok(((n - k) / self.stride + 1, 0))
            }
        }
    }
}

struct Geometry {
    n: usize,
    c: usize,
    y: usize,
    x: usize,
    o: usize,
    cpg: usize,
    opg: usize,
    k: usize,
    oy: usize,
    ox: usize,
    pad_y: usize,
    pad_x: usize,
    stride: usize,
}

impl Geometry {
    fn new(input: &[usize], weight: &[usize], spec: &ConvSpec) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects [N,C,Y,X] input and [O,C/g,k,k] weight, got {input:?} and {weight:?}"
            )));
        }
        let (n, c, y, x) = (input[0], input[1], input[2], input[3]);
        let (o, cpg, k) = (weight[0], weight[1], weight[2]);
        if weight[3] != k || k % 2 == 0 {
            return Err(Error::shape(format!("conv2d kernel must be odd and square, got {}x{}", k, weight[3])));
        }
        let g = spec.groups;
        if g == 0 || c % g != 0 || o % g != 0 || c / g != cpg {
            return Err(Error::shape(format!(
                "channel mismatch: input has {c} channels, weight expects {cpg} per group over {g} groups with {o} outputs"
            )));
        }
        let (oy, pad_y) = spec.geometry(y, k)?;
        let (ox, pad_x) = spec.geometry(x, k)?;
        Ok(Geometry { n, c, y, x, o, cpg, opg: o / g, k, oy, ox, pad_y, pad_x, stride: spec.stride })
    }

    /// Output columns `ox` whose input column `ox*s + kx - pad` lies inside the plane.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kx as isize - self.pad_x as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = (self.x as isize - 1 - off).div_euclid(s) + 1;
        (lo.max(0) as usize, (hi.max(0) as usize).min(self.ox))
    }

    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad_y as isize;
        (iy >= 0 && (iy as usize) < self.y).then_some(iy as usize)
    }
}

/// Cross-correlation `out(y) = sum_c sum_x f_c(x) w_c(x - y)` with the kernel
/// indexed about its center pixel; no kernel flip.
pub fn conv2d<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, spec: ConvSpec) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), weight.shape(), &spec)?;
    let plane_out = g.oy * g.ox;
    let mut out = vec![T::zero(); g.n * g.o * plane_out];
    let (inp, w) = (input.data(), weight.data());
    let kk = g.k * g.k;
    parallel::for_each_chunk(&mut out, plane_out, |idx, plane| {
        let (n, o) = (idx / g.o, idx % g.o);
        let c0 = (o / g.opg) * g.cpg;
        // each input channel is accumulated into its own partial plane and then
        // added, so the result equals summing per-channel responses in order
        let mut partial = vec![T::zero(); plane_out];
        for cl in 0..g.cpg {
            partial.iter_mut().for_each(|v| *v = T::zero());
            let src = &inp[(n * g.c + c0 + cl) * g.y * g.x..][..g.y * g.x];
            let wk = &w[(o * g.cpg + cl) * kk..][..kk];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = wk[ky * g.k + kx];
                    let (lo, hi) = g.col_range(kx);
                    for oy in 0..g.oy {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let row = &src[iy * g.x..][..g.x];
                        let dst = &mut partial[oy * g.ox..][..g.ox];
                        for (ox, d) in dst.iter_mut().enumerate().take(hi).skip(lo) {
                            *d = *d + row[ox * g.stride + kx - g.pad_x] * wv;
                        }
                    }
                }
            }
            for (d, &p) in plane.iter_mut().zip(&partial) {
                *d = *d + p;
            }
        }
    });
    Ok(Tensor::from_parts(vec![g.n, g.o, g.oy, g.ox], out))
}

pub fn conv2d_backward_input<T: Element>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    weight: &Tensor<T>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input_shape, weight.shape(), &spec)?;
    if grad_out.shape() != [g.n, g.o, g.oy, g.ox] {
        return Err(Error::shape("conv2d gradient shape mismatch"));
    }
    let plane_in = g.y * g.x;
    let mut out = vec![T::zero(); g.n * g.c * plane_in];
    let (go, w) = (grad_out.data(), weight.data());
    let kk = g.k * g.k;
    parallel::for_each_chunk(&mut out, plane_in, |idx, plane| {
        let (n, c) = (idx / g.c, idx % g.c);
        let grp = c / g.cpg;
        let cl = c % g.cpg;
        for o in grp * g.opg..(grp + 1) * g.opg {
            let gplane = &go[(n * g.o + o) * g.oy * g.ox..][..g.oy * g.ox];
            let wk = &w[(o * g.cpg + cl) * kk..][..kk];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = wk[ky * g.k + kx];
                    let (lo, hi) = g.col_range(kx);
                    for oy in 0..g.oy {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        for ox in lo..hi {
                            let ix = ox * g.stride + kx - g.pad_x;
                            let d = &mut plane[iy * g.x + ix];
                            *d = *d + gplane[oy * g.ox + ox] * wv;
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(input_shape.to_vec(), out))
}

pub fn conv2d_backward_weight<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight_shape: &[usize],
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), weight_shape, &spec)?;
    if grad_out.shape() != [g.n, g.o, g.oy, g.ox] {
        return Err(Error::shape("conv2d gradient shape mismatch"));
    }
    let kk = g.k * g.k;
    let mut out = vec![T::zero(); g.o * g.cpg * kk];
    let (go, inp) = (grad_out.data(), input.data());
    parallel::for_each_chunk(&mut out, g.cpg * kk, |o, wgrad| {
        let c0 = (o / g.opg) * g.cpg;
        for n in 0..g.n {
            let gplane = &go[(n * g.o + o) * g.oy * g.ox..][..g.oy * g.ox];
            for cl in 0..g.cpg {
                let src = &inp[(n * g.c + c0 + cl) * g.y * g.x..][..g.y * g.x];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let (lo, hi) = g.col_range(kx);
                        let mut acc = T::zero();
                        for oy in 0..g.oy {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            for ox in lo..hi {
                                let ix = ox * g.stride + kx - g.pad_x;
                                acc = acc + gplane[oy * g.ox + ox] * src[iy * g.x + ix];
                            }
                        }
                        let d = &mut wgrad[cl * kk + ky * g.k + kx];
                        *d = *d + acc;
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(weight_shape.to_vec(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct evaluation of `sum_c sum_d f_c(y*s + d - pad) w_c(d)` with
    /// explicit bounds checks.
    fn naive(f: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, oy: usize, ox: usize) -> Tensor<f64> {
        let (n, c, y, x) = (f.shape()[0], f.shape()[1], f.shape()[2], f.shape()[3]);
        let (o, k) = (w.shape()[0], w.shape()[2]);
        Tensor::from_fn(&[n, o, oy, ox], |i| {
            let mut acc = 0.0;
            for ci in 0..c {
                for a in 0..k {
                    for b in 0..k {
                        let yy = (i[2] * stride + a) as isize - pad as isize;
                        let xx = (i[3] * stride + b) as isize - pad as isize;
                        if yy >= 0 && xx >= 0 && (yy as usize) < y && (xx as usize) < x {
                            acc += f.get(&[i[0], ci, yy as usize, xx as usize]) * w.get(&[i[1], ci, a, b]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_kernel() {
        let f = random(&[1, 1, 4, 5], 1);
        let w = Tensor::<f64>::ones(&[1, 1, 1, 1]);
        assert_eq!(conv2d(&f, &w, ConvSpec::same()).unwrap(), f);
    }

    #[test]
    fn ones_valid_is_nine() {
        let f = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let out = conv2d(&f, &w, ConvSpec::valid()).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn same_padding_matches_loop_oracle() {
        let f = random(&[1, 1, 5, 5], 2);
        let w = random(&[1, 1, 3, 3], 3);
        let out = conv2d(&f, &w, ConvSpec::same()).unwrap();
        assert!(out.max_abs_diff(&naive(&f, &w, 1, 1, 5, 5)).unwrap() <= 1e-12);
    }

    #[test]
    fn strided_and_multichannel_match_oracle() {
        let f = random(&[2, 3, 7, 7], 4);
        let w = random(&[2, 3, 3, 3], 5);
        let out = conv2d(&f, &w, ConvSpec::same().with_stride(2)).unwrap();
        assert_eq!(out.shape(), &[2, 2, 4, 4]);
        assert!(out.max_abs_diff(&naive(&f, &w, 2, 1, 4, 4)).unwrap() <= 1e-12);
        let out = conv2d(&f, &w, ConvSpec::valid().with_stride(2)).unwrap();
        assert_eq!(out.shape(), &[2, 2, 3, 3]);
        assert!(out.max_abs_diff(&naive(&f, &w, 2, 0, 3, 3)).unwrap() <= 1e-12);
    }

    #[test]
    fn grouped_equals_blockwise() {
        let f = random(&[1, 4, 5, 5], 6);
        let w = random(&[6, 2, 3, 3], 7);
        let out = conv2d(&f, &w, ConvSpec::same().with_groups(2)).unwrap();
        for grp in 0..2 {
            let fi = Tensor::from_fn(&[1, 2, 5, 5], |i| f.get(&[0, grp * 2 + i[1], i[2], i[3]]));
            let wi = Tensor::from_fn(&[3, 2, 3, 3], |i| w.get(&[grp * 3 + i[0], i[1], i[2], i[3]]));
            let part = conv2d(&fi, &wi, ConvSpec::same()).unwrap();
            for o in 0..3 {
                for p in 0..25 {
                    assert_eq!(out.data()[(grp * 3 + o) * 25 + p], part.data()[o * 25 + p]);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = random(&[1, 2, 5, 5], 1);
        assert!(conv2d(&f, &random(&[1, 3, 3, 3], 1), ConvSpec::same()).is_err());
        assert!(conv2d(&f, &random(&[1, 2, 2, 2], 1), ConvSpec::same()).is_err());
        assert!(conv2d(&f, &random(&[1, 2, 3, 3], 1), ConvSpec::same().with_stride(0)).is_err());
    }

    #[test]
    fn linear_in_input() {
        let (a, b) = (random(&[1, 2, 6, 6], 8), random(&[1, 2, 6, 6], 9));
        let w = random(&[3, 2, 3, 3], 10);
        let mix = Tensor::from_fn(a.shape(), |i| 0.7 * a.get(i) - 1.3 * b.get(i));
        let lhs = conv2d(&mix, &w, ConvSpec::same()).unwrap();
        let (ca, cb) = (conv2d(&a, &w, ConvSpec::same()).unwrap(), conv2d(&b, &w, ConvSpec::same()).unwrap());
        let rhs = Tensor::from_fn(lhs.shape(), |i| 0.7 * ca.get(i) - 1.3 * cb.get(i));
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
    }

    #[test]
    fn commutes_with_translation_in_interior() {
        let f = random(&[1, 1, 10, 10], 11);
        let w = random(&[1, 1, 3, 3], 12);
        let (dy, dx) = (2isize, -1isize);
        let a = conv2d(&f.translate_spatial(dy, dx).unwrap(), &w, ConvSpec::same()).unwrap();
        let b = conv2d(&f, &w, ConvSpec::same()).unwrap().translate_spatial(dy, dx).unwrap();
        // rows/cols touched by the shift plus the kernel radius are excluded
        for i in 3..9 {
            for j in 1..8 {
                assert!((a.get(&[0, 0, i, j]) - b.get(&[0, 0, i, j])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_adjoint_identity() {
        // <conv(f, w), g> = <f, conv^T_input(g, w)> = <w, conv^T_weight(g, f)>
        for spec in [ConvSpec::same(), ConvSpec::same().with_stride(2), ConvSpec::valid(), ConvSpec::same().with_groups(2)] {
            let f = random(&[2, 4, 7, 6], 13);
            let w = random(&[4, 4 / spec.groups, 3, 3], 14);
            let out = conv2d(&f, &w, spec).unwrap();
            let g = random(out.shape(), 15);
            let lhs: f64 = out.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let gi = conv2d_backward_input(&g, f.shape(), &w, spec).unwrap();
            let gw = conv2d_backward_weight(&g, &f, w.shape(), spec).unwrap();
            let r1: f64 = f.data().iter().zip(gi.data()).map(|(a, b)| a * b).sum();
            let r2: f64 = w.data().iter().zip(gw.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - r1).abs() < 1e-10, "{spec:?}");
            assert!((lhs - r2).abs() < 1e-10, "{spec:?}");
        }
    }
}
