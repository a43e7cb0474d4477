//! Lifting and group convolutions on `G = Z^2 ⋊ H`, realized as `|H|`
//! spatial convolutions with transformed copies of one filter bank.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::group::{FiniteGroup, GroupName};
use crate::ops::{Eager, Ops};
use crate::tensor::{ConvSpec, Element, ReduceMode, Tensor};

/// Default cap on the bytes an intermediate-response tensor may occupy.
pub const DEFAULT_MEMORY_CAP: u64 = 2 << 30;

/// A function on `G` sampled on the grid: `[N, C, G, Y, X]` with `G ∈ {1, |H|}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapG<T> {
    pub tensor: Tensor<T>,
    pub group: GroupName,
}

impl<T: Element> FeatureMapG<T> {
    pub fn new(tensor: Tensor<T>, group: GroupName) -> Result<Self> {
        let order = FiniteGroup::new(group).order();
        if tensor.rank() != 5 || (tensor.shape()[2] != 1 && tensor.shape()[2] != order) {
            return Err(Error::shape(format!(
                "feature map must be [N,C,G,Y,X] with G in {{1, {order}}}, got {:?}",
                tensor.shape()
            )));
        }
        Ok(FeatureMapG { tensor, group })
    }

    /// Wraps an `[N, C, Y, X]` image batch as a planar map.
    pub fn planar(images: &Tensor<T>, group: GroupName) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::shape(format!("planar input must be [N,C,Y,X], got {s:?}")));
        }
        Self::new(images.reshape(&[s[0], s[1], 1, s[2], s[3]])?, group)
    }

    pub fn is_planar(&self) -> bool {
        self.tensor.shape()[2] == 1
    }
}

/// `f̃[n, o, c̃, h, h̃, y, x]`: per-channel, per-pose responses before the
/// `(c̃, h̃)` reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct IntermediateResponses<T> {
    pub tensor: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct GConvLayer<T> {
    pub group: FiniteGroup,
    /// `[C_out, C_in, |H_in|, k, k]`; `|H_in| = 1` for a lifting layer.
    pub filter: Tensor<T>,
    /// One scalar per output channel, shared across the `|H|` axis.
    pub bias: Option<Tensor<T>>,
    pub spec: ConvSpec,
    pub memory_cap: u64,
}

impl<T: Element> GConvLayer<T> {
    pub fn new(group: FiniteGroup, filter: Tensor<T>, bias: Option<Tensor<T>>, spec: ConvSpec) -> Result<Self> {
        check_filter(&group, filter.shape())?;
        if let Some(b) = &bias {
            if b.shape() != [filter.shape()[0]] {
                return Err(Error::shape(format!("bias must be [{}], got {:?}", filter.shape()[0], b.shape())));
            }
        }
        if spec.groups != 1 {
            return Err(Error::invalid("group convolution layers use groups = 1"));
        }
        Ok(GConvLayer { group, filter, bias, spec, memory_cap: DEFAULT_MEMORY_CAP })
    }

    pub fn is_lifting(&self) -> bool {
        self.filter.shape()[2] == 1 && self.group.order() > 1
    }

    pub fn out_channels(&self) -> usize {
        self.filter.shape()[0]
    }
}

fn check_filter(group: &FiniteGroup, shape: &[usize]) -> Result<()> {
    if shape.len() != 5 || (shape[2] != 1 && shape[2] != group.order()) {
        return Err(Error::shape(format!(
            "filter must be [O,C,H_in,k,k] with H_in in {{1, {}}}, got {shape:?}",
            group.order()
        )));
    }
    if shape[3] != shape[4] || shape[3].is_multiple_of(2) {
        return Err(Error::shape(format!("filter must be odd and square, got {}x{}", shape[3], shape[4])));
    }
    Ok(())
}

/// Gather index stacking `L_h[ψ]` for every `h` into a plain conv weight
/// `[O·|H|, C·|H_in|, k, k]` with output channels ordered `(o, h)`.
pub fn filter_bank_index(group: &FiniteGroup, shape: &[usize]) -> Result<Vec<usize>> {
    check_filter(group, shape)?;
    let per_o: usize = shape[1..].iter().product();
    let maps: Vec<Vec<usize>> =
        group.elements().map(|h| group.action_index(h, shape, &[2], true)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(shape[0] * group.order() * per_o);
    for o in 0..shape[0] {
        for m in &maps {
            out.extend_from_slice(&m[o * per_o..(o + 1) * per_o]);
        }
    }
    Ok(out)
}

/// Gather index for the grouped-conv weight behind `f̃`:
/// `[C·|H_in|·O·|H|, 1, k, k]` ordered `(c̃, h̃, o, h)`.
fn response_bank_index(group: &FiniteGroup, shape: &[usize]) -> Result<Vec<usize>> {
    check_filter(group, shape)?;
    let (o_n, c_n, hin, k) = (shape[0], shape[1], shape[2], shape[3]);
    let kk = k * k;
    let maps: Vec<Vec<usize>> =
        group.elements().map(|h| group.action_index(h, shape, &[2], true)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(c_n * hin * o_n * group.order() * kk);
    for c in 0..c_n {
        for ht in 0..hin {
            for o in 0..o_n {
                for m in &maps {
                    let base = ((o * c_n + c) * hin + ht) * kk;
                    out.extend_from_slice(&m[base..base + kk]);
                }
            }
        }
    }
    Ok(out)
}

fn check_input(group: &FiniteGroup, x: &[usize], filter: &[usize]) -> Result<()> {
    if x.len() != 5 {
        return Err(Error::shape(format!("input must be [N,C,G,Y,X], got {x:?}")));
    }
    if x[1] != filter[1] || x[2] != filter[2] {
        return Err(Error::shape(format!(
            "input {x:?} does not match filter {filter:?} (channels and |H_in| axis must agree)"
        )));
    }
    if x[2] != 1 && x[2] != group.order() {
        return Err(Error::shape(format!("input group axis {} is neither 1 nor |H|", x[2])));
    }
    Ok(())
}

/// `out(x, h) = sum_c̃ sum_h̃ [f_{c̃,h̃} ⋆ L_h[ψ]_{c̃,h̃}](x) + b`, for lifting
/// (`|H_in| = 1`) and group-to-group filters alike.
pub fn gconv_op<T: Element, O: Ops<T>>(
    ops: &mut O,
    group: &FiniteGroup,
    x: &O::V,
    filter: &O::V,
    bias: Option<&O::V>,
    spec: ConvSpec,
) -> Result<O::V> {
    let (xs, fs) = (ops.shape(x), ops.shape(filter));
    check_filter(group, &fs)?;
    check_input(group, &xs, &fs)?;
    let h = group.order();
    let (n, c, hin, y, xw) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (o, k) = (fs[0], fs[3]);
    let index: Arc<[usize]> = filter_bank_index(group, &fs)?.into();
    let w = ops.gather(filter, index, &[o * h, c * hin, k, k])?;
    let flat = ops.reshape(x, &[n, c * hin, y, xw])?;
    let out = ops.conv2d(&flat, &w, ConvSpec { groups: 1, ..spec })?;
    let os = ops.shape(&out);
    let out = ops.reshape(&out, &[n, o, h, os[2], os[3]])?;
    match bias {
        Some(b) => {
            let b = ops.reshape(b, &[1, o, 1, 1, 1])?;
            ops.add(&out, &b)
        }
        None => Ok(out),
    }
}

pub fn intermediate_bytes<T: Element>(
    group: &FiniteGroup,
    x: &[usize],
    filter: &[usize],
    spec: ConvSpec,
) -> Result<(u64, u64)> {
    let (oy, _) = spec.geometry(x[3], filter[3])?;
    let (ox, _) = spec.geometry(x[4], filter[3])?;
    let elements = [x[0], filter[0], x[1], group.order(), x[2], oy, ox].iter().map(|&d| d as u64).product::<u64>();
    Ok((elements, elements * T::DTYPE.size() as u64))
}

/// `f̃` as `[N, O, C, |H|, |H_in|, Y', X']`, no bias.
pub fn intermediate_op<T: Element, O: Ops<T>>(
    ops: &mut O,
    group: &FiniteGroup,
    x: &O::V,
    filter: &O::V,
    spec: ConvSpec,
    memory_cap: u64,
) -> Result<O::V> {
    let (xs, fs) = (ops.shape(x), ops.shape(filter));
    check_filter(group, &fs)?;
    check_input(group, &xs, &fs)?;
    let (elements, needed) = intermediate_bytes::<T>(group, &xs, &fs, spec)?;
    if needed > memory_cap {
        return Err(Error::MemoryCap { needed, elements, cap: memory_cap });
    }
    let h = group.order();
    let (n, c, hin, y, xw) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (o, k) = (fs[0], fs[3]);
    let index: Arc<[usize]> = response_bank_index(group, &fs)?.into();
    let w = ops.gather(filter, index, &[c * hin * o * h, 1, k, k])?;
    let flat = ops.reshape(x, &[n, c * hin, y, xw])?;
    let out = ops.conv2d(&flat, &w, ConvSpec { groups: c * hin, ..spec })?;
    let os = ops.shape(&out);
    let out = ops.reshape(&out, &[n, c, hin, o, h, os[2], os[3]])?;
    ops.permute(&out, &[0, 3, 1, 4, 2, 5, 6])
}

/// Reduces the `|H|` axis of `[N, C, G, Y, X]`, giving `[N, C, Y, X]`.
pub fn group_pool_op<T: Element, O: Ops<T>>(ops: &mut O, x: &O::V, mode: ReduceMode) -> Result<O::V> {
    let s = ops.shape(x);
    if s.len() != 5 {
        return Err(Error::shape(format!("group pooling expects [N,C,G,Y,X], got {s:?}")));
    }
    let r = ops.reduce(x, &[2], mode)?;
    ops.reshape(&r, &[s[0], s[1], s[3], s[4]])
}

/// Reduces the spatial axes of `[N, C, G, Y, X]`, giving `[N, C, G]`.
pub fn spatial_pool_op<T: Element, O: Ops<T>>(ops: &mut O, x: &O::V, mode: ReduceMode) -> Result<O::V> {
    let s = ops.shape(x);
    if s.len() != 5 {
        return Err(Error::shape(format!("spatial pooling expects [N,C,G,Y,X], got {s:?}")));
    }
    let r = ops.reduce(x, &[3, 4], mode)?;
    ops.reshape(&r, &[s[0], s[1], s[2]])
}

fn check_group<T: Element>(f: &FeatureMapG<T>, layer: &GConvLayer<T>) -> Result<()> {
    if f.group != layer.group.name() {
        return Err(Error::invalid(format!(
            "feature map over {} fed to a layer over {}",
            f.group,
            layer.group.name()
        )));
    }
    Ok(())
}

pub fn lift_conv<T: Element>(f: &FeatureMapG<T>, layer: &GConvLayer<T>) -> Result<FeatureMapG<T>> {
    check_group(f, layer)?;
    if !f.is_planar() || layer.filter.shape()[2] != 1 {
        return Err(Error::shape("lifting needs a planar input and a filter with |H_in| = 1"));
    }
    let out = gconv_op(&mut Eager, &layer.group, &f.tensor, &layer.filter, layer.bias.as_ref(), layer.spec)?;
    FeatureMapG::new(out, f.group)
}

pub fn group_conv<T: Element>(f: &FeatureMapG<T>, layer: &GConvLayer<T>) -> Result<FeatureMapG<T>> {
    check_group(f, layer)?;
    if f.tensor.shape()[2] != layer.group.order() || layer.filter.shape()[2] != layer.group.order() {
        return Err(Error::shape("group convolution needs a full |H| axis on input and filter"));
    }
    let out = gconv_op(&mut Eager, &layer.group, &f.tensor, &layer.filter, layer.bias.as_ref(), layer.spec)?;
    FeatureMapG::new(out, f.group)
}

pub fn intermediate_responses<T: Element>(
    f: &FeatureMapG<T>,
    layer: &GConvLayer<T>,
) -> Result<IntermediateResponses<T>> {
    check_group(f, layer)?;
    let tensor = intermediate_op(&mut Eager, &layer.group, &f.tensor, &layer.filter, layer.spec, layer.memory_cap)?;
    Ok(IntermediateResponses { tensor })
}

pub fn group_pool<T: Element>(f: &FeatureMapG<T>, mode: ReduceMode) -> Result<Tensor<T>> {
    group_pool_op(&mut Eager, &f.tensor, mode)
}

pub fn spatial_gpool<T: Element>(f: &FeatureMapG<T>, mode: ReduceMode) -> Result<Tensor<T>> {
    spatial_pool_op(&mut Eager, &f.tensor, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{make_group, transform_feature, transform_filter};
    use crate::tensor::conv2d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn trivial_group_is_plain_conv() {
        let g = make_group(GroupName::C1);
        let x = random(&[2, 3, 1, 6, 6], 1);
        let psi = random(&[4, 3, 1, 3, 3], 2);
        let layer = GConvLayer::new(g, psi.clone(), None, ConvSpec::same()).unwrap();
        let out = group_conv(&FeatureMapG::new(x.clone(), GroupName::C1).unwrap(), &layer).unwrap();
        let plain = conv2d(&x.reshape(&[2, 3, 6, 6]).unwrap(), &psi.reshape(&[4, 3, 3, 3]).unwrap(), ConvSpec::same()).unwrap();
        assert_eq!(out.tensor.data(), plain.data());
    }

    #[test]
    fn delta_response_shows_rotated_filters() {
        let g = make_group(GroupName::C4);
        let mut x = Tensor::<f64>::zeros(&[1, 1, 1, 7, 7]);
        x.set(&[0, 0, 0, 3, 3], 1.0);
        let psi = random(&[1, 1, 1, 3, 3], 3);
        let layer = GConvLayer::new(g.clone(), psi.clone(), None, ConvSpec::same()).unwrap();
        let out = lift_conv(&FeatureMapG::new(x, GroupName::C4).unwrap(), &layer).unwrap();
        for h in g.elements() {
            let rot = transform_filter(&g, h, &psi).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    // correlation with a delta reads the kernel mirrored about its center
                    assert_eq!(out.tensor.get(&[0, 0, h, 4 - a, 4 - b]), rot.get(&[0, 0, 0, a, b]));
                }
            }
        }
    }

    #[test]
    fn lifting_rotation_permutes_and_rotates() {
        let g = make_group(GroupName::C4);
        let x = random(&[1, 2, 1, 8, 8], 4);
        let layer = GConvLayer::new(g.clone(), random(&[3, 2, 1, 3, 3], 5), Some(random(&[3], 6)), ConvSpec::same()).unwrap();
        let f = FeatureMapG::new(x.clone(), GroupName::C4).unwrap();
        let rf = FeatureMapG::new(transform_feature(&g, 1, &x).unwrap(), GroupName::C4).unwrap();
        let a = lift_conv(&rf, &layer).unwrap().tensor;
        let b = transform_feature(&g, 1, &lift_conv(&f, &layer).unwrap().tensor).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-10);
    }

    #[test]
    fn responses_sum_to_group_conv_bitwise() {
        for name in [GroupName::C4, GroupName::D4] {
            let g = make_group(name);
            let hn = g.order();
            let x = random(&[2, 2, hn, 5, 5], 7);
            let layer = GConvLayer::new(g, random(&[3, 2, hn, 3, 3], 8), None, ConvSpec::same()).unwrap();
            let f = FeatureMapG::new(x, name).unwrap();
            let full = group_conv(&f, &layer).unwrap().tensor;
            let ft = intermediate_responses(&f, &layer).unwrap().tensor;
            assert_eq!(ft.shape(), &[2, 3, 2, hn, hn, 5, 5]);
            let summed = ft.sum_axes(&[2, 4]).unwrap().into_shape(full.shape()).unwrap();
            assert_eq!(summed.data(), full.data());
        }
    }

    #[test]
    fn memory_cap_is_enforced() {
        let g = make_group(GroupName::C4);
        let mut layer = GConvLayer::new(g, random(&[2, 2, 4, 3, 3], 1), None, ConvSpec::same()).unwrap();
        layer.memory_cap = 1024;
        let f = FeatureMapG::new(random(&[1, 2, 4, 6, 6], 2), GroupName::C4).unwrap();
        assert!(matches!(intermediate_responses(&f, &layer), Err(Error::MemoryCap { .. })));
    }

    #[test]
    fn mismatches_are_errors() {
        let g = make_group(GroupName::C4);
        let layer = GConvLayer::new(g, random(&[2, 2, 4, 3, 3], 1), None, ConvSpec::same()).unwrap();
        let wrong_group = FeatureMapG::new(random(&[1, 2, 8, 6, 6], 2), GroupName::D4).unwrap();
        assert!(group_conv(&wrong_group, &layer).is_err());
        let planar = FeatureMapG::new(random(&[1, 2, 1, 6, 6], 2), GroupName::C4).unwrap();
        assert!(group_conv(&planar, &layer).is_err());
        assert!(GConvLayer::new(make_group(GroupName::C4), random(&[2, 2, 3, 3, 3], 1), None, ConvSpec::same()).is_err());
    }

    #[test]
    fn pooling_shapes_and_invariance() {
        let g = make_group(GroupName::C4);
        let x = random(&[1, 2, 4, 6, 6], 9);
        let f = FeatureMapG::new(x.clone(), GroupName::C4).unwrap();
        let p = group_pool(&f, ReduceMode::Max).unwrap();
        assert_eq!(p.shape(), &[1, 2, 6, 6]);
        let rp = group_pool(&FeatureMapG::new(transform_feature(&g, 1, &x).unwrap(), GroupName::C4).unwrap(), ReduceMode::Max).unwrap();
        let p5 = p.reshape(&[1, 2, 1, 6, 6]).unwrap();
        assert_eq!(transform_feature(&g, 1, &p5).unwrap().data(), rp.data());
        let c = FeatureMapG::new(Tensor::full(&[1, 1, 4, 3, 3], 0.7f64), GroupName::C4).unwrap();
        assert!(group_pool(&c, ReduceMode::Mean).unwrap().data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert_eq!(spatial_gpool(&f, ReduceMode::Mean).unwrap().shape(), &[1, 2, 4]);
        let planar = FeatureMapG::new(random(&[1, 3, 1, 4, 4], 1), GroupName::C4).unwrap();
        assert_eq!(group_pool(&planar, ReduceMode::Max).unwrap().data(), planar.tensor.data());
    }
}
