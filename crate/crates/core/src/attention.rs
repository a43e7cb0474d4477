//! Equivariant channel and spatial attention over the intermediate
//! responses of a group convolution, plus the cheaper input-attention form.

use std::str::FromStr;
use std::sync::Arc;

use crate::autodiff::Rng64;
use crate::error::{Error, Result};
use crate::gconv::{gconv_op, intermediate_op, FeatureMapG, GConvLayer, IntermediateResponses};
use crate::group::FiniteGroup;
use crate::nn::he_uniform;
use crate::ops::{Eager, Ops};
use crate::tensor::{Element, Tensor, UnaryOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionVariant {
    #[default]
    Full,
    Channel,
    Spatial,
}

impl AttentionVariant {
    pub fn uses_channel(self) -> bool {
        matches!(self, AttentionVariant::Full | AttentionVariant::Channel)
    }

    pub fn uses_spatial(self) -> bool {
        matches!(self, AttentionVariant::Full | AttentionVariant::Spatial)
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(AttentionVariant::Full),
            "channel" | "ch" => Ok(AttentionVariant::Channel),
            "spatial" | "sp" => Ok(AttentionVariant::Spatial),
            _ => Err(Error::invalid(format!("unknown attention variant '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub variant: AttentionVariant,
    /// Gate with `1 - σ(z)` instead of `σ(z)`.
    pub residual_branch: bool,
    /// Share one channel map across output channels (stats pooled over `o`).
    pub pool_out_channels: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig { variant: AttentionVariant::Full, residual_branch: true, pool_out_channels: true }
    }
}

impl AttentionConfig {
    pub fn gate(&self) -> UnaryOp {
        if self.residual_branch {
            UnaryOp::ResidualGate
        } else {
            UnaryOp::Sigmoid
        }
    }
}

/// Matrix-valued kernels `W1: H -> R^{C/r × C}` and `W2: H -> R^{C × C/r}`.
/// The leading extent is 1 for lifting layers and planar inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttentionParams<T> {
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
    pub reduction: usize,
}

impl<T: Element> ChannelAttentionParams<T> {
    pub fn new(w1: Tensor<T>, w2: Tensor<T>) -> Result<Self> {
        let (s1, s2) = (w1.shape(), w2.shape());
        if s1.len() != 3 || s2 != [s1[0], s1[2], s1[1]] || s1[1] == 0 || s1[2] % s1[1] != 0 {
            return Err(Error::shape(format!("W1 {s1:?} and W2 {s2:?} do not form a C -> C/r -> C bottleneck")));
        }
        let reduction = s1[2] / s1[1];
        Ok(ChannelAttentionParams { w1, w2, reduction })
    }

    pub fn zeros(extent: usize, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = hidden_width(channels, reduction)?;
        Self::new(Tensor::zeros(&[extent, hidden, channels]), Tensor::zeros(&[extent, channels, hidden]))
    }

    pub fn random(extent: usize, channels: usize, reduction: usize, rng: &mut Rng64) -> Result<Self> {
        let hidden = hidden_width(channels, reduction)?;
        Self::new(
            he_uniform(&[extent, hidden, channels], channels, rng),
            he_uniform(&[extent, channels, hidden], hidden, rng),
        )
    }

    pub fn channels(&self) -> usize {
        self.w1.shape()[2]
    }
}

pub fn hidden_width(channels: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || !channels.is_multiple_of(reduction) {
        return Err(Error::invalid(format!("reduction ratio {reduction} does not divide {channels} channels")));
    }
    Ok(channels / reduction)
}

/// `ψ_X: [1, 2, |H_in|, k, k]` over the (mean, max) statistic channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialAttentionParams<T> {
    pub psi: Tensor<T>,
}

impl<T: Element> SpatialAttentionParams<T> {
    pub fn new(psi: Tensor<T>) -> Result<Self> {
        let s = psi.shape();
        if s.len() != 5 || s[0] != 1 || s[1] != 2 || s[3] != s[4] || s[3].is_multiple_of(2) {
            return Err(Error::shape(format!("spatial filter must be [1,2,H_in,k,k] with odd k, got {s:?}")));
        }
        Ok(SpatialAttentionParams { psi })
    }

    pub fn zeros(extent: usize, k: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[1, 2, extent, k, k]))
    }

    pub fn random(extent: usize, k: usize, rng: &mut Rng64) -> Result<Self> {
        Self::new(he_uniform(&[1, 2, extent, k, k], 2 * extent * k * k, rng))
    }
}

/// `α_C: [N, C_in, |H|, |H_in|]` and `α_X: [N, 1, |H|, |H_in|, Y, X]`; with
/// unpooled output channels the leading axis is `N·C_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps<T> {
    pub alpha_c: Option<Tensor<T>>,
    pub alpha_x: Option<Tensor<T>>,
}

/// Result of an attentive convolution under any [`Ops`] backend.
pub struct Attended<V> {
    pub out: V,
    pub alpha_c: Option<V>,
    pub alpha_x: Option<V>,
}

/// Which kernel `W(k)` serves the pose pair `(h, h̃)`: `k = h⁻¹h̃`, or 0 for a
/// single shared pair. Laid out as `[|H|, |H_in|]`.
pub fn pair_index(group: &FiniteGroup, extent: usize, hin: usize) -> Result<Vec<usize>> {
    let h = group.order();
    if extent == 1 {
        return Ok(vec![0; h * hin]);
    }
    if extent != h || hin != h {
        return Err(Error::shape(format!(
            "kernel extent {extent} needs |H_in| = |H| = {h}, got |H_in| = {hin}"
        )));
    }
    Ok((0..h).flat_map(|a| (0..h).map(move |b| group.mul(group.inv(a), b))).collect())
}

fn pair_gather<T: Element, O: Ops<T>>(ops: &mut O, w: &O::V, pairs: &[usize], rows: usize) -> Result<O::V> {
    let s = ops.shape(w);
    let per: usize = s[1..].iter().product();
    let index: Arc<[usize]> = pairs.iter().flat_map(|&k| k * per..(k + 1) * per).collect();
    let cols = pairs.len() / rows;
    ops.gather(w, index, &[1, rows, cols, s[1], s[2]])
}

/// Two-layer bottleneck on stacked stats `[B, C, A, Hin]`. With `contract`
/// each layer is a group convolution over the pose axis
/// (`Σ_h̃ W(h⁻¹h̃)·s(h̃)`); otherwise each `(h, h̃)` pair is mapped
/// independently. Returns pre-activations `[B, C, A', Hin']`.
fn bottleneck<T: Element, O: Ops<T>>(
    ops: &mut O,
    s: &O::V,
    w1: &O::V,
    w2: &O::V,
    pairs: &[usize],
    rows: usize,
    contract: bool,
) -> Result<O::V> {
    let ss = ops.shape(s);
    let (b, c, a, hin) = (ss[0], ss[1], ss[2], ss[3]);
    let hidden = ops.shape(w1)[1];
    let w1g = pair_gather(ops, w1, pairs, rows)?;
    let w2g = pair_gather(ops, w2, pairs, rows)?;
    let sp = ops.permute(s, &[0, 2, 3, 1])?;
    let sp = ops.reshape(&sp, &[b, a, hin, 1, c])?;
    let prod = ops.mul(&sp, &w1g)?;
    let z = ops.sum(&prod, if contract { &[2, 4] } else { &[4] })?;
    let z = ops.relu(&z)?;
    let zs = ops.shape(&z);
    let (a1, h1) = (zs[1], zs[2]);
    let z = if contract { ops.reshape(&z, &[b, 1, a1, 1, hidden])? } else { ops.reshape(&z, &[b, a1, h1, 1, hidden])? };
    let prod = ops.mul(&z, &w2g)?;
    let out = ops.sum(&prod, if contract { &[2, 4] } else { &[4] })?;
    let os = ops.shape(&out);
    let out = ops.reshape(&out, &[b, os[1], os[2], c])?;
    ops.permute(&out, &[0, 3, 1, 2])
}

/// Adds the avg and max branches stacked along the batch axis.
fn merge_branches<T: Element, O: Ops<T>>(ops: &mut O, z: &O::V) -> Result<O::V> {
    let s = ops.shape(z);
    let mut split = vec![2, s[0] / 2];
    split.extend_from_slice(&s[1..]);
    let z = ops.reshape(z, &split)?;
    let z = ops.sum(&z, &[0])?;
    let mut shape = s.clone();
    shape[0] /= 2;
    ops.reshape(&z, &shape)
}

/// `(s_avg, s_max)`, each `[N', C_in, |H|, |H_in|]`.
pub fn channel_stats_op<T: Element, O: Ops<T>>(ops: &mut O, ft: &O::V, pool_out: bool) -> Result<(O::V, O::V)> {
    let s = ops.shape(ft);
    let (axes, lead): (&[usize], usize) = if pool_out { (&[1, 5, 6], s[0]) } else { (&[5, 6], s[0] * s[1]) };
    let shape = [lead, s[2], s[3], s[4]];
    let avg = ops.mean(ft, axes)?;
    let max = ops.max(ft, axes)?;
    Ok((ops.reshape(&avg, &shape)?, ops.reshape(&max, &shape)?))
}

/// `s_X: [N', 2, |H|, |H_in|, Y, X]`, channel 0 the mean and channel 1 the max
/// over `(o, c̃)`.
pub fn spatial_stats_op<T: Element, O: Ops<T>>(ops: &mut O, ft: &O::V, pool_out: bool) -> Result<O::V> {
    let s = ops.shape(ft);
    let (axes, lead): (&[usize], usize) = if pool_out { (&[1, 2], s[0]) } else { (&[2], s[0] * s[1]) };
    let shape = [lead, 1, s[3], s[4], s[5], s[6]];
    let avg = ops.mean(ft, axes)?;
    let avg = ops.reshape(&avg, &shape)?;
    let max = ops.max(ft, axes)?;
    let max = ops.reshape(&max, &shape)?;
    ops.concat(&[&avg, &max], 1)
}

/// `α_C(h, h̃) = gate(W2 [W1 s_avg]⁺ + W2 [W1 s_max]⁺)` with `W = W(pairs(h, h̃))`.
pub fn channel_attention_op<T: Element, O: Ops<T>>(
    ops: &mut O,
    group: &FiniteGroup,
    s_avg: &O::V,
    s_max: &O::V,
    w1: &O::V,
    w2: &O::V,
    gate: UnaryOp,
) -> Result<O::V> {
    let hin = ops.shape(s_avg)[3];
    let pairs = pair_index(group, ops.shape(w1)[0], hin)?;
    channel_attention_with(ops, s_avg, s_max, w1, w2, gate, &pairs, group.order())
}

/// [`channel_attention_op`] with an explicit `[|H|, |H_in|]` kernel table.
#[allow(clippy::too_many_arguments)]
pub fn channel_attention_with<T: Element, O: Ops<T>>(
    ops: &mut O,
    s_avg: &O::V,
    s_max: &O::V,
    w1: &O::V,
    w2: &O::V,
    gate: UnaryOp,
    pairs: &[usize],
    rows: usize,
) -> Result<O::V> {
    let (ss, ws) = (ops.shape(s_avg), ops.shape(w1));
    if ss.len() != 4 || ss[1] != ws[2] || ops.shape(s_max) != ss {
        return Err(Error::shape(format!("channel stats {ss:?} do not match W1 {ws:?}")));
    }
    if pairs.len() != rows * ss[3] {
        return Err(Error::shape("kernel table does not cover every (h, h̃) pair"));
    }
    let s = ops.concat(&[s_avg, s_max], 0)?;
    let z = bottleneck(ops, &s, w1, w2, pairs, rows, false)?;
    let z = merge_branches(ops, &z)?;
    ops.unary(&z, gate)
}

/// Weight gather for the spatial map: output channel `(h, h̃)` convolves the
/// two statistic channels with slice `h̃` of `L_h[ψ_X]`.
fn spatial_bank_index(group: &FiniteGroup, shape: &[usize]) -> Result<Vec<usize>> {
    let (hin, kk) = (shape[2], shape[3] * shape[4]);
    let mut out = Vec::with_capacity(group.order() * hin * 2 * kk);
    for h in group.elements() {
        let map = group.action_index(h, shape, &[2], true)?;
        for ht in 0..hin {
            for c in 0..2 {
                let base = (c * hin + ht) * kk;
                out.extend_from_slice(&map[base..base + kk]);
            }
        }
    }
    Ok(out)
}

/// `α_X(h, x, h̃) = gate([s_X(h, ·, h̃) ⋆ L_h[ψ_X]_{h̃}](x))`.
pub fn spatial_attention_op<T: Element, O: Ops<T>>(
    ops: &mut O,
    group: &FiniteGroup,
    s_x: &O::V,
    psi: &O::V,
    gate: UnaryOp,
) -> Result<O::V> {
    let (ss, ps) = (ops.shape(s_x), ops.shape(psi));
    let h = group.order();
    if ss.len() != 6 || ss[1] != 2 || ss[2] != h {
        return Err(Error::shape(format!("spatial stats must be [N,2,{h},H_in,Y,X], got {ss:?}")));
    }
    if ps.len() != 5 || ps[0] != 1 || ps[1] != 2 || ps[2] != ss[3] || ps[3] != ps[4] || ps[3] % 2 == 0 {
        return Err(Error::shape(format!("spatial filter {ps:?} does not fit stats {ss:?}")));
    }
    let (n, hin, y, x, k) = (ss[0], ss[3], ss[4], ss[5], ps[3]);
    let index: Arc<[usize]> = spatial_bank_index(group, &ps)?.into();
    let w = ops.gather(psi, index, &[h * hin, 2, k, k])?;
    let sp = ops.permute(s_x, &[0, 2, 3, 1, 4, 5])?;
    let sp = ops.reshape(&sp, &[n, h * hin * 2, y, x])?;
    let z = ops.conv2d(&sp, &w, crate::tensor::ConvSpec::same().with_groups(h * hin))?;
    let z = ops.reshape(&z, &[n, 1, h, hin, y, x])?;
    ops.unary(&z, gate)
}

fn channel_map_view<T: Element, O: Ops<T>>(ops: &mut O, a: &O::V, n: usize) -> Result<O::V> {
    let s = ops.shape(a);
    ops.reshape(a, &[n, s[0] / n, s[1], s[2], s[3], 1, 1])
}

fn spatial_map_view<T: Element, O: Ops<T>>(ops: &mut O, a: &O::V, n: usize) -> Result<O::V> {
    let s = ops.shape(a);
    ops.reshape(a, &[n, s[0] / n, 1, s[2], s[3], s[4], s[5]])
}

/// `Σ_c̃ Σ_h̃ α_X·α_C·f̃ + b` as `[N, C_out, |H|, Y, X]`; absent maps count as 1.
pub fn modulate_and_reduce_op<T: Element, O: Ops<T>>(
    ops: &mut O,
    ft: &O::V,
    alpha_c: Option<&O::V>,
    alpha_x: Option<&O::V>,
    bias: Option<&O::V>,
) -> Result<O::V> {
    let s = ops.shape(ft);
    if s.len() != 7 {
        return Err(Error::shape(format!("intermediate responses must be rank 7, got {s:?}")));
    }
    let mut m = ft.clone();
    if let Some(a) = alpha_c {
        let a = channel_map_view(ops, a, s[0])?;
        m = ops.mul(&m, &a)?;
    }
    if let Some(a) = alpha_x {
        let a = spatial_map_view(ops, a, s[0])?;
        m = ops.mul(&m, &a)?;
    }
    let out = ops.sum(&m, &[2, 4])?;
    let out = ops.reshape(&out, &[s[0], s[1], s[3], s[5], s[6]])?;
    match bias {
        Some(b) => {
            let b = ops.reshape(b, &[1, s[1], 1, 1, 1])?;
            ops.add(&out, &b)
        }
        None => Ok(out),
    }
}

/// Parameters of one attentive layer under any backend.
pub struct AttentionVars<'a, V> {
    pub w1: Option<&'a V>,
    pub w2: Option<&'a V>,
    pub psi: Option<&'a V>,
}

/// `out(x, h) = Σ_c̃ Σ_h̃ α_X(h, x, h̃)·α_C_c̃(h, h̃)·f̃_c̃(x, h, h̃) + b`, channel
/// map first and spatial stats taken from the channel-modulated responses.
#[allow(clippy::too_many_arguments)]
pub fn attentive_op<T: Element, O: Ops<T>>(
    ops: &mut O,
    layer_group: &FiniteGroup,
    x: &O::V,
    filter: &O::V,
    bias: Option<&O::V>,
    att: &AttentionVars<'_, O::V>,
    spec: crate::tensor::ConvSpec,
    config: AttentionConfig,
    memory_cap: u64,
) -> Result<Attended<O::V>> {
    let ft = intermediate_op(ops, layer_group, x, filter, spec, memory_cap)?;
    let n = ops.shape(&ft)[0];
    let gate = config.gate();
    let pool = config.pool_out_channels;
    let mut modulated = ft.clone();
    let alpha_c = if config.variant.uses_channel() {
        let (w1, w2) = att.w1.zip(att.w2).ok_or_else(|| Error::invalid("channel attention needs W1 and W2"))?;
        let (avg, max) = channel_stats_op(ops, &ft, pool)?;
        let a = channel_attention_op(ops, layer_group, &avg, &max, w1, w2, gate)?;
        let view = channel_map_view(ops, &a, n)?;
        modulated = ops.mul(&modulated, &view)?;
        Some(a)
    } else {
        None
    };
    let alpha_x = if config.variant.uses_spatial() {
        let psi = att.psi.ok_or_else(|| Error::invalid("spatial attention needs a spatial filter"))?;
        let s_x = spatial_stats_op(ops, &modulated, pool)?;
        Some(spatial_attention_op(ops, layer_group, &s_x, psi, gate)?)
    } else {
        None
    };
    let out = match &alpha_x {
        Some(a) => modulate_and_reduce_op(ops, &modulated, None, Some(a), bias)?,
        None => modulate_and_reduce_op(ops, &modulated, None, None, bias)?,
    };
    Ok(Attended { out, alpha_c, alpha_x })
}

/// `α_X·α_C·f` with both maps computed from `f` itself by group convolutions
/// over `H`. Input `[N, C, G, Y, X]`, output the same shape.
pub fn input_attention_op<T: Element, O: Ops<T>>(
    ops: &mut O,
    group: &FiniteGroup,
    f: &O::V,
    att: &AttentionVars<'_, O::V>,
    gate: UnaryOp,
) -> Result<Attended<O::V>> {
    let s = ops.shape(f);
    if s.len() != 5 {
        return Err(Error::shape(format!("input attention expects [N,C,G,Y,X], got {s:?}")));
    }
    let (n, c, g) = (s[0], s[1], s[2]);
    let mut out = f.clone();
    let alpha_c = match att.w1.zip(att.w2) {
        Some((w1, w2)) => {
            let avg = ops.mean(f, &[3, 4])?;
            let avg = ops.reshape(&avg, &[n, c, 1, g])?;
            let max = ops.max(f, &[3, 4])?;
            let max = ops.reshape(&max, &[n, c, 1, g])?;
            let st = ops.concat(&[&avg, &max], 0)?;
            let extent = ops.shape(w1)[0];
            if ops.shape(w1)[2] != c {
                return Err(Error::shape(format!("W1 {:?} does not match {c} channels", ops.shape(w1))));
            }
            let (pairs, rows) = if extent == 1 { (vec![0; g], 1) } else { (pair_index(group, extent, g)?, group.order()) };
            let z = bottleneck(ops, &st, w1, w2, &pairs, rows, true)?;
            let z = merge_branches(ops, &z)?;
            let a = ops.unary(&z, gate)?;
            let rows_out = ops.shape(&a)[2];
            let a = ops.reshape(&a, &[n, c, rows_out])?;
            let view = ops.reshape(&a, &[n, c, rows_out, 1, 1])?;
            out = ops.mul(&out, &view)?;
            Some(a)
        }
        None => None,
    };
    let alpha_x = match att.psi {
        Some(psi) => {
            let avg = ops.mean(&out, &[1])?;
            let max = ops.max(&out, &[1])?;
            let st = ops.concat(&[&avg, &max], 1)?;
            let z = gconv_op(ops, group, &st, psi, None, crate::tensor::ConvSpec::same())?;
            let z = if g == 1 && group.order() > 1 { ops.mean(&z, &[2])? } else { z };
            let a = ops.unary(&z, gate)?;
            out = ops.mul(&out, &a)?;
            Some(a)
        }
        None => None,
    };
    Ok(Attended { out, alpha_c, alpha_x })
}

pub fn channel_stats<T: Element>(ft: &IntermediateResponses<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    channel_stats_op(&mut Eager, &ft.tensor, true)
}

pub fn channel_attention<T: Element>(
    s_avg: &Tensor<T>,
    s_max: &Tensor<T>,
    params: &ChannelAttentionParams<T>,
    group: &FiniteGroup,
    config: AttentionConfig,
) -> Result<Tensor<T>> {
    channel_attention_op(&mut Eager, group, s_avg, s_max, &params.w1, &params.w2, config.gate())
}

pub fn spatial_stats<T: Element>(ft: &IntermediateResponses<T>) -> Result<Tensor<T>> {
    spatial_stats_op(&mut Eager, &ft.tensor, true)
}

pub fn spatial_attention<T: Element>(
    s_x: &Tensor<T>,
    params: &SpatialAttentionParams<T>,
    group: &FiniteGroup,
    config: AttentionConfig,
) -> Result<Tensor<T>> {
    spatial_attention_op(&mut Eager, group, s_x, &params.psi, config.gate())
}

/// `1 - σ(z)`: the residual-branch gate, spanning `[0, 1]` with `z = 0 ↦ 0.5`.
pub fn residual_gate<T: Element>(z: &Tensor<T>) -> Tensor<T> {
    z.unary(UnaryOp::ResidualGate)
}

pub fn modulate_and_reduce<T: Element>(
    ft: &IntermediateResponses<T>,
    alpha_c: Option<&Tensor<T>>,
    alpha_x: Option<&Tensor<T>>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    modulate_and_reduce_op(&mut Eager, &ft.tensor, alpha_c, alpha_x, bias)
}

pub fn attentive_group_conv<T: Element>(
    f: &FeatureMapG<T>,
    layer: &GConvLayer<T>,
    channel: Option<&ChannelAttentionParams<T>>,
    spatial: Option<&SpatialAttentionParams<T>>,
    config: AttentionConfig,
) -> Result<(FeatureMapG<T>, AttentionMaps<T>)> {
    if f.group != layer.group.name() {
        return Err(Error::invalid(format!("feature map over {} fed to a layer over {}", f.group, layer.group.name())));
    }
    let att = AttentionVars {
        w1: channel.map(|p| &p.w1),
        w2: channel.map(|p| &p.w2),
        psi: spatial.map(|p| &p.psi),
    };
    let r = attentive_op(
        &mut Eager,
        &layer.group,
        &f.tensor,
        &layer.filter,
        layer.bias.as_ref(),
        &att,
        layer.spec,
        config,
        layer.memory_cap,
    )?;
    Ok((FeatureMapG::new(r.out, f.group)?, AttentionMaps { alpha_c: r.alpha_c, alpha_x: r.alpha_x }))
}

pub fn input_attention<T: Element>(
    f: &FeatureMapG<T>,
    group: &FiniteGroup,
    channel: Option<&ChannelAttentionParams<T>>,
    spatial: Option<&SpatialAttentionParams<T>>,
    config: AttentionConfig,
) -> Result<(FeatureMapG<T>, AttentionMaps<T>)> {
    if f.group != group.name() {
        return Err(Error::invalid(format!("feature map over {} attended over {}", f.group, group.name())));
    }
    let att = AttentionVars {
        w1: channel.map(|p| &p.w1),
        w2: channel.map(|p| &p.w2),
        psi: spatial.map(|p| &p.psi),
    };
    let r = input_attention_op(&mut Eager, group, &f.tensor, &att, config.gate())?;
    Ok((FeatureMapG::new(r.out, f.group)?, AttentionMaps { alpha_c: r.alpha_c, alpha_x: r.alpha_x }))
}
