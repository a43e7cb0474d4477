//! Layer stacks built from group convolutions and attention, with
//! parameter initialization, a forward pass generic over [`Ops`] and a
//! deterministic trainer.

use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::attention::{attentive_op, hidden_width, input_attention_op, AttentionConfig, AttentionVariant, AttentionVars};
use crate::autodiff::{dropout, OptimizerState, ParamId, ParamStore, Rng64, Tape};
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::gconv::{gconv_op, DEFAULT_MEMORY_CAP};
use crate::group::{FiniteGroup, GroupName};
use crate::ops::{Eager, Ops};
use crate::tensor::{ConvSpec, Element, Padding, Tensor, UnaryOp};

pub const BATCH_NORM_EPS: f64 = 2e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Uniform on `[-b, b]` with `b = sqrt(6 / fan_in)`.
pub fn he_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut Rng64) -> Tensor<T> {
    let b = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-b..=b)))
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// Lifting when the incoming map is planar, group-to-group otherwise.
    Conv { out: usize, k: usize, stride: usize, padding: Padding },
    Attentive { out: usize, k: usize, stride: usize, padding: Padding, variant: AttentionVariant, reduction: usize, spatial_k: usize },
    InputAttention { reduction: usize, spatial_k: usize },
    Relu,
    MaxPool { window: usize, stride: usize },
    BatchNorm,
    Dropout { rate: f64 },
    /// Max over the `|H|` axis.
    GroupPool,
    /// Mean over every remaining group and spatial axis, giving `[N, C]`.
    SpatialMean,
    Linear { out: usize },
}

impl LayerSpec {
    pub fn conv(out: usize, k: usize) -> Self {
        LayerSpec::Conv { out, k, stride: 1, padding: Padding::Same }
    }

    pub fn attentive(out: usize, k: usize, variant: AttentionVariant) -> Self {
        LayerSpec::Attentive { out, k, stride: 1, padding: Padding::Same, variant, reduction: 2, spatial_k: 7 }
    }

    pub fn has_spatial_attention(&self) -> bool {
        match self {
            LayerSpec::Attentive { variant, .. } => variant.uses_spatial(),
            LayerSpec::InputAttention { .. } => true,
            _ => false,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { out, k, stride, .. } => write!(f, "conv(out={out},k={k},stride={stride})"),
            LayerSpec::Attentive { out, k, variant, .. } => write!(f, "attentive-{variant:?}(out={out},k={k})"),
            LayerSpec::InputAttention { reduction, spatial_k } => write!(f, "input-attention(r={reduction},k={spatial_k})"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool { window, stride } => write!(f, "maxpool({window},{stride})"),
            LayerSpec::BatchNorm => f.write_str("batchnorm"),
            LayerSpec::Dropout { rate } => write!(f, "dropout({rate})"),
            LayerSpec::GroupPool => f.write_str("group-pool"),
            LayerSpec::SpatialMean => f.write_str("spatial-mean"),
            LayerSpec::Linear { out } => write!(f, "linear({out})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub group: GroupName,
    pub in_channels: usize,
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
    /// Gate and pooling flags; the variant comes from each layer.
    pub attention: AttentionConfig,
}

/// Named architectures. `rot-MNIST`-style backbones take 28x28 inputs; the
/// `tiny-*` nets take the 16x16 synthetic shapes.
pub const MODEL_NAMES: [&str; 10] =
    ["p4", "a-p4", "ach-p4", "asp-p4", "af-p4", "p4m", "af-p4m", "tiny-p4", "tiny-a-p4", "tiny-af-p4"];

impl NetworkSpec {
    pub fn named(name: &str) -> Result<Self> {
        let backbone = |group: GroupName, att: Option<AttentionVariant>, input: bool| {
            let valid = |out| LayerSpec::Conv { out, k: 3, stride: 1, padding: Padding::Valid };
            let block = |out: usize, first: bool| -> Vec<LayerSpec> {
                let mut v = Vec::new();
                if input && !first {
                    v.push(LayerSpec::InputAttention { reduction: 2, spatial_k: 7 });
                }
                v.push(match att {
                    Some(variant) if !first => LayerSpec::Attentive {
                        out,
                        k: 3,
                        stride: 1,
                        padding: Padding::Valid,
                        variant,
                        reduction: 2,
                        spatial_k: 7,
                    },
                    _ => valid(out),
                });
                v
            };
            let mut layers = Vec::new();
            for i in 0..7 {
                let out = 10;
                layers.extend(block(out, i == 0));
                if i < 6 {
                    layers.extend([LayerSpec::BatchNorm, LayerSpec::Relu]);
                }
                if i == 1 {
                    layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
                }
                if i == 2 || i == 4 {
                    layers.push(LayerSpec::Dropout { rate: 0.3 });
                }
            }
            layers.extend([LayerSpec::GroupPool, LayerSpec::SpatialMean]);
            NetworkSpec {
                name: name.to_string(),
                group,
                in_channels: 1,
                input_size: 28,
                layers,
                attention: AttentionConfig::default(),
            }
        };
        let tiny = |input: bool, attentive: bool| {
            let mut layers = vec![LayerSpec::conv(8, 5), LayerSpec::Relu, LayerSpec::MaxPool { window: 2, stride: 2 }];
            if input {
                layers.push(LayerSpec::InputAttention { reduction: 2, spatial_k: 5 });
            }
            layers.push(if attentive { LayerSpec::attentive(8, 3, AttentionVariant::Full) } else { LayerSpec::conv(8, 3) });
            layers.extend([
                LayerSpec::Relu,
                LayerSpec::GroupPool,
                LayerSpec::SpatialMean,
                LayerSpec::Linear { out: 4 },
            ]);
            NetworkSpec {
                name: name.to_string(),
                group: GroupName::C4,
                in_channels: 1,
                input_size: 16,
                layers,
                attention: AttentionConfig::default(),
            }
        };
        Ok(match name {
            "p4" => backbone(GroupName::C4, None, false),
            "a-p4" => backbone(GroupName::C4, Some(AttentionVariant::Full), false),
            "ach-p4" => backbone(GroupName::C4, Some(AttentionVariant::Channel), false),
            "asp-p4" => backbone(GroupName::C4, Some(AttentionVariant::Spatial), false),
            "af-p4" => backbone(GroupName::C4, None, true),
            "p4m" => backbone(GroupName::D4, None, false),
            "af-p4m" => backbone(GroupName::D4, None, true),
            "tiny-p4" => tiny(false, false),
            "tiny-a-p4" => tiny(false, true),
            "tiny-af-p4" => tiny(true, false),
            other => return Err(Error::invalid(format!("unknown model '{other}' (known: {})", MODEL_NAMES.join(", ")))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Conv { filter: ParamId, bias: ParamId, spec: ConvSpec },
    Attentive { filter: ParamId, bias: ParamId, w: Option<(ParamId, ParamId)>, psi: Option<ParamId>, spec: ConvSpec, variant: AttentionVariant },
    InputAttention { w1: ParamId, w2: ParamId, psi: ParamId },
    Relu,
    MaxPool { window: usize, stride: usize },
    BatchNorm { gamma: ParamId, beta: ParamId, buffers: usize },
    Dropout { rate: f64 },
    GroupPool,
    SpatialMean,
    Linear { weight: ParamId, bias: ParamId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Group { c: usize, g: usize, y: usize, x: usize },
    Flat(usize),
}

/// Maps emitted by one attention layer during an eager pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMaps<T> {
    pub layer: usize,
    pub alpha_c: Option<Tensor<T>>,
    pub alpha_x: Option<Tensor<T>>,
}

/// Per-pass settings. Dropout draws from `rng` only when `training`.
pub struct Mode<'a> {
    pub training: bool,
    pub rng: &'a mut Rng64,
    pub record_maps: bool,
}

pub struct Forward<V, T> {
    pub logits: V,
    pub maps: Vec<LayerMaps<T>>,
    /// `(buffer slot, batch mean, batch variance)` for every batch-norm layer
    /// run in training mode.
    pub batch_stats: Vec<(usize, Tensor<T>, Tensor<T>)>,
}

#[derive(Clone, Debug)]
pub struct Network<T: Element> {
    pub spec: NetworkSpec,
    pub group: FiniteGroup,
    pub params: ParamStore<T>,
    /// Batch-norm running mean and variance, two slots per layer.
    pub buffers: Vec<Tensor<T>>,
    pub memory_cap: u64,
    layers: Vec<Layer>,
}

impl<T: Element> Network<T> {
    pub fn new(spec: NetworkSpec, rng: &mut Rng64) -> Result<Self> {
        let group = FiniteGroup::new(spec.group);
        let h = group.order();
        let mut params = ParamStore::new();
        let mut buffers = Vec::new();
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut shape = Shape::Group { c: spec.in_channels, g: 1, y: spec.input_size, x: spec.input_size };
        for (i, ls) in spec.layers.iter().enumerate() {
            let layer = match (ls, shape) {
                (LayerSpec::Conv { out, k, stride, padding }, Shape::Group { c, g, y, x }) => {
                    let cs = ConvSpec { stride: *stride, padding: *padding, groups: 1 };
                    let filter = params.add(format!("{i}.filter"), he_uniform(&[*out, c, g, *k, *k], c * g * k * k, rng), true);
                    let bias = params.add(format!("{i}.bias"), Tensor::zeros(&[*out]), false);
                    shape = Shape::Group { c: *out, g: h, y: cs.geometry(y, *k)?.0, x: cs.geometry(x, *k)?.0 };
                    Layer::Conv { filter, bias, spec: cs }
                }
                (LayerSpec::Attentive { out, k, stride, padding, variant, reduction, spatial_k }, Shape::Group { c, g, y, x }) => {
                    let cs = ConvSpec { stride: *stride, padding: *padding, groups: 1 };
                    let filter = params.add(format!("{i}.filter"), he_uniform(&[*out, c, g, *k, *k], c * g * k * k, rng), true);
                    let bias = params.add(format!("{i}.bias"), Tensor::zeros(&[*out]), false);
                    let w = if variant.uses_channel() {
                        let r = hidden_width(c, *reduction)?;
                        let w1 = params.add(format!("{i}.w1"), he_uniform(&[g, r, c], c, rng), true);
                        let w2 = params.add(format!("{i}.w2"), he_uniform(&[g, c, r], r, rng), true);
                        Some((w1, w2))
                    } else {
                        None
                    };
                    let psi = variant.uses_spatial().then(|| {
                        let fan = 2 * g * spatial_k * spatial_k;
                        params.add(format!("{i}.psi"), he_uniform(&[1, 2, g, *spatial_k, *spatial_k], fan, rng), true)
                    });
                    shape = Shape::Group { c: *out, g: h, y: cs.geometry(y, *k)?.0, x: cs.geometry(x, *k)?.0 };
                    Layer::Attentive { filter, bias, w, psi, spec: cs, variant: *variant }
                }
                (LayerSpec::InputAttention { reduction, spatial_k }, Shape::Group { c, g, .. }) => {
                    let r = hidden_width(c, *reduction)?;
                    let w1 = params.add(format!("{i}.w1"), he_uniform(&[g, r, c], c * g, rng), true);
                    let w2 = params.add(format!("{i}.w2"), he_uniform(&[g, c, r], r * g, rng), true);
                    let fan = 2 * g * spatial_k * spatial_k;
                    let psi = params.add(format!("{i}.psi"), he_uniform(&[1, 2, g, *spatial_k, *spatial_k], fan, rng), true);
                    Layer::InputAttention { w1, w2, psi }
                }
                (LayerSpec::Relu, _) => Layer::Relu,
                (LayerSpec::MaxPool { window, stride }, Shape::Group { c, g, y, x }) => {
                    if *window > y || *window > x || *stride == 0 {
                        return Err(Error::shape(format!("layer {i}: pool {window}/{stride} on {y}x{x}")));
                    }
                    shape = Shape::Group { c, g, y: (y - window) / stride + 1, x: (x - window) / stride + 1 };
                    Layer::MaxPool { window: *window, stride: *stride }
                }
                (LayerSpec::BatchNorm, s) => {
                    let c = match s {
                        Shape::Group { c, .. } => c,
                        Shape::Flat(c) => c,
                    };
                    let gamma = params.add(format!("{i}.gamma"), Tensor::ones(&[c]), false);
                    let beta = params.add(format!("{i}.beta"), Tensor::zeros(&[c]), false);
                    buffers.push(Tensor::zeros(&[c]));
                    buffers.push(Tensor::ones(&[c]));
                    Layer::BatchNorm { gamma, beta, buffers: buffers.len() - 2 }
                }
                (LayerSpec::Dropout { rate }, _) => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(Error::invalid(format!("layer {i}: dropout rate {rate} outside [0, 1)")));
                    }
                    Layer::Dropout { rate: *rate }
                }
                (LayerSpec::GroupPool, Shape::Group { c, y, x, .. }) => {
                    shape = Shape::Group { c, g: 1, y, x };
                    Layer::GroupPool
                }
                (LayerSpec::SpatialMean, Shape::Group { c, .. }) => {
                    shape = Shape::Flat(c);
                    Layer::SpatialMean
                }
                (LayerSpec::Linear { out }, Shape::Flat(c)) => {
                    let weight = params.add(format!("{i}.weight"), he_uniform(&[*out, c], c, rng), true);
                    let bias = params.add(format!("{i}.bias"), Tensor::zeros(&[*out]), false);
                    shape = Shape::Flat(*out);
                    Layer::Linear { weight, bias }
                }
                (ls, s) => return Err(Error::invalid(format!("layer {i} ({ls}) cannot follow a {s:?} activation"))),
            };
            layers.push(layer);
        }
        if !matches!(shape, Shape::Flat(_)) {
            return Err(Error::invalid("network must end in a flat [N, classes] output"));
        }
        Ok(Network { spec, group, params, buffers, memory_cap: DEFAULT_MEMORY_CAP, layers })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn num_classes(&self) -> usize {
        let mut shape = 0;
        for l in &self.layers {
            match l {
                Layer::Linear { weight, .. } => shape = self.params.get(*weight).value.shape()[0],
                Layer::Conv { filter, .. } | Layer::Attentive { filter, .. } => shape = self.params.get(*filter).value.shape()[0],
                _ => {}
            }
        }
        shape
    }

    /// Runs the stack on images `[N, C, Y, X]`; `vars[i]` holds parameter `i`.
    pub fn forward<O: Ops<T>>(&self, ops: &mut O, vars: &[O::V], images: &O::V, mode: &mut Mode<'_>) -> Result<Forward<O::V, T>> {
        let s = ops.shape(images);
        if s.len() != 4 || s[1] != self.spec.in_channels {
            return Err(Error::shape(format!("network expects [N,{},Y,X] images, got {s:?}", self.spec.in_channels)));
        }
        let mut x = ops.reshape(images, &[s[0], s[1], 1, s[2], s[3]])?;
        let mut maps = Vec::new();
        let mut batch_stats = Vec::new();
        let gate = self.spec.attention.gate();
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                Layer::Conv { filter, bias, spec } => gconv_op(ops, &self.group, &x, &vars[filter.0], Some(&vars[bias.0]), *spec)?,
                Layer::Attentive { filter, bias, w, psi, spec, variant } => {
                    let att = AttentionVars {
                        w1: w.map(|(a, _)| &vars[a.0]),
                        w2: w.map(|(_, b)| &vars[b.0]),
                        psi: psi.map(|p| &vars[p.0]),
                    };
                    let config = AttentionConfig { variant: *variant, ..self.spec.attention };
                    let r = attentive_op(ops, &self.group, &x, &vars[filter.0], Some(&vars[bias.0]), &att, *spec, config, self.memory_cap)?;
                    if mode.record_maps {
                        maps.push(LayerMaps {
                            layer: i,
                            alpha_c: r.alpha_c.as_ref().map(|v| ops.value(v).clone()),
                            alpha_x: r.alpha_x.as_ref().map(|v| ops.value(v).clone()),
                        });
                    }
                    r.out
                }
                Layer::InputAttention { w1, w2, psi } => {
                    let att = AttentionVars { w1: Some(&vars[w1.0]), w2: Some(&vars[w2.0]), psi: Some(&vars[psi.0]) };
                    let r = input_attention_op(ops, &self.group, &x, &att, gate)?;
                    if mode.record_maps {
                        maps.push(LayerMaps {
                            layer: i,
                            alpha_c: r.alpha_c.as_ref().map(|v| ops.value(v).clone()),
                            alpha_x: r.alpha_x.as_ref().map(|v| ops.value(v).clone()),
                        });
                    }
                    r.out
                }
                Layer::Relu => ops.relu(&x)?,
                Layer::MaxPool { window, stride } => ops.max_pool2d(&x, *window, *stride)?,
                Layer::BatchNorm { gamma, beta, buffers } => {
                    let (y, stats) = self.batch_norm(ops, &x, &vars[gamma.0], &vars[beta.0], *buffers, mode.training)?;
                    if let Some((m, v)) = stats {
                        batch_stats.push((*buffers, m, v));
                    }
                    y
                }
                Layer::Dropout { rate } => dropout(ops, &x, *rate, mode.rng, mode.training)?,
                Layer::GroupPool => ops.max(&x, &[2])?,
                Layer::SpatialMean => {
                    let m = ops.mean(&x, &[2, 3, 4])?;
                    let c = ops.shape(&m)[1];
                    ops.reshape(&m, &[s[0], c])?
                }
                Layer::Linear { weight, bias } => {
                    let xs = ops.shape(&x);
                    let w = &vars[weight.0];
                    let o = ops.shape(w)[0];
                    let xr = ops.reshape(&x, &[xs[0], 1, xs[1]])?;
                    let wr = ops.reshape(w, &[1, o, xs[1]])?;
                    let p = ops.mul(&xr, &wr)?;
                    let p = ops.sum(&p, &[2])?;
                    let p = ops.reshape(&p, &[xs[0], o])?;
                    let b = ops.reshape(&vars[bias.0], &[1, o])?;
                    ops.add(&p, &b)?
                }
            };
        }
        Ok(Forward { logits: x, maps, batch_stats })
    }

    /// Normalizes with statistics shared across the `|H|` and spatial axes.
    #[allow(clippy::type_complexity)]
    fn batch_norm<O: Ops<T>>(
        &self,
        ops: &mut O,
        x: &O::V,
        gamma: &O::V,
        beta: &O::V,
        slot: usize,
        training: bool,
    ) -> Result<(O::V, Option<(Tensor<T>, Tensor<T>)>)> {
        let s = ops.shape(x);
        let axes: Vec<usize> = (0..s.len()).filter(|&a| a != 1).collect();
        let mut view = vec![1; s.len()];
        view[1] = s[1];
        let (centered, var, stats) = if training {
            let mu = ops.mean(x, &axes)?;
            let d = ops.sub(x, &mu)?;
            let sq = ops.unary(&d, UnaryOp::Square)?;
            let var = ops.mean(&sq, &axes)?;
            let stats = (ops.value(&mu).reshape(&[s[1]])?, ops.value(&var).reshape(&[s[1]])?);
            (d, var, Some(stats))
        } else {
            let mu = ops.constant(self.buffers[slot].reshape(&view)?);
            let var = ops.constant(self.buffers[slot + 1].reshape(&view)?);
            (ops.sub(x, &mu)?, var, None)
        };
        let inv = ops.affine(&var, 1.0, BATCH_NORM_EPS)?;
        let inv = ops.unary(&inv, UnaryOp::Rsqrt)?;
        let y = ops.mul(&centered, &inv)?;
        let g = ops.reshape(gamma, &view)?;
        let b = ops.reshape(beta, &view)?;
        let y = ops.mul(&y, &g)?;
        Ok((ops.add(&y, &b)?, stats))
    }

    pub fn update_running_stats(&mut self, stats: &[(usize, Tensor<T>, Tensor<T>)]) -> Result<()> {
        let m = T::from_f64(BATCH_NORM_MOMENTUM);
        let keep = T::from_f64(1.0 - BATCH_NORM_MOMENTUM);
        for (slot, mean, var) in stats {
            for (buf, new) in [(*slot, mean), (*slot + 1, var)] {
                let old = &self.buffers[buf];
                self.buffers[buf] = old.scale(keep).add(&new.scale(m))?;
            }
        }
        Ok(())
    }

    /// Eager evaluation-mode logits.
    pub fn logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = Rng64::seed_from_u64(0);
        let mut mode = Mode { training: false, rng: &mut rng, record_maps: false };
        let vars = self.params.eager();
        Ok(self.forward(&mut Eager, &vars, images, &mut mode)?.logits)
    }

    /// Eager evaluation-mode pass that keeps every attention map.
    pub fn attention_maps(&self, images: &Tensor<T>) -> Result<Vec<LayerMaps<T>>> {
        let mut rng = Rng64::seed_from_u64(0);
        let mut mode = Mode { training: false, rng: &mut rng, record_maps: true };
        let vars = self.params.eager();
        Ok(self.forward(&mut Eager, &vars, images, &mut mode)?.maps)
    }

    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.logits(images)?;
        let k = logits.shape()[1];
        Ok(logits
            .data()
            .chunks(k)
            .map(|row| row.iter().enumerate().fold(0, |best, (i, v)| if *v > row[best] { i } else { best }))
            .collect())
    }

    /// One optimizer step on a batch; returns the mean loss.
    pub fn train_step(&mut self, opt: &mut OptimizerState<T>, images: Tensor<T>, labels: &[usize], rng: &mut Rng64) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.leaves(&mut tape);
        let x = tape.constant(images);
        let mut mode = Mode { training: true, rng, record_maps: false };
        let fwd = self.forward(&mut tape, &vars, &x, &mut mode)?;
        let loss = tape.cross_entropy(&fwd.logits, labels)?;
        let value = tape.value(&loss).data()[0].to_f64();
        let grads = tape.backward(loss)?;
        self.params.zero_grad();
        self.params.accumulate(&grads, &vars)?;
        opt.step(&mut self.params)?;
        self.update_running_stats(&fwd.batch_stats)?;
        Ok(value)
    }

    /// Mean loss and accuracy in evaluation mode.
    pub fn evaluate(&self, set: &LabeledImageSet, batch: usize) -> Result<(f64, f64)> {
        let (mut loss, mut correct) = (0.0, 0usize);
        let idx: Vec<usize> = (0..set.len()).collect();
        for chunk in idx.chunks(batch.max(1)) {
            let (images, labels) = set.batch::<T>(chunk);
            let logits = self.logits(&images)?;
            let l = Eager.cross_entropy(&logits, &labels)?;
            loss += l.data()[0].to_f64() * chunk.len() as f64;
            let k = logits.shape()[1];
            for (row, &y) in logits.data().chunks(k).zip(&labels) {
                let best = row.iter().enumerate().fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
                correct += usize::from(best == y);
            }
        }
        let n = set.len().max(1) as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Multiply the learning rate by `.1` every `.0` epochs.
    pub lr_decay: Option<(usize, f64)>,
    /// Stop after the epoch that crosses this wall-clock budget.
    pub time_limit: Option<Duration>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 100, batch: 128, lr: 1e-3, weight_decay: 1e-4, seed: 0, lr_decay: None, time_limit: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_error: f64,
    pub val_error: Option<f64>,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} train_loss={:.6} train_error={:.4}", self.epoch, self.train_loss, self.train_error)?;
        if let Some(v) = self.val_error {
            write!(f, " val_error={v:.4}")?;
        }
        write!(f, " seconds={:.2}", self.seconds)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport<T> {
    pub epochs: Vec<EpochLog>,
    pub final_loss: f64,
    pub optimizer: OptimizerState<T>,
}

/// Adam training with per-epoch reshuffling drawn from `config.seed`.
pub fn train<T: Element>(
    net: &mut Network<T>,
    train_set: &LabeledImageSet,
    val_set: Option<&LabeledImageSet>,
    config: &TrainConfig,
    mut log: impl FnMut(&EpochLog),
) -> Result<TrainReport<T>> {
    if config.batch == 0 || train_set.is_empty() {
        return Err(Error::invalid("training needs a positive batch size and a non-empty set"));
    }
    let mut opt = OptimizerState::adam(&net.params, config.lr, config.weight_decay);
    let mut rng = Rng64::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let start = Instant::now();
    let mut epochs = Vec::new();
    let mut final_loss = f64::NAN;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen, mut correct) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch) {
            let (images, labels) = train_set.batch::<T>(chunk);
            let loss = net.train_step(&mut opt, images.clone(), &labels, &mut rng)?;
            total += loss * chunk.len() as f64;
            seen += chunk.len();
            correct += net.predict(&images)?.iter().zip(&labels).filter(|(a, b)| a == b).count();
            final_loss = loss;
        }
        let val_error = match val_set {
            Some(v) => Some(1.0 - net.evaluate(v, config.batch)?.1),
            None => None,
        };
        let entry = EpochLog {
            epoch,
            train_loss: total / seen as f64,
            train_error: 1.0 - correct as f64 / seen as f64,
            val_error,
            seconds: start.elapsed().as_secs_f64(),
        };
        log(&entry);
        epochs.push(entry);
        if let Some((every, factor)) = config.lr_decay {
            if every > 0 && epoch % every == 0 {
                opt.decay_lr(factor);
            }
        }
        if config.time_limit.is_some_and(|t| start.elapsed() >= t) {
            break;
        }
    }
    Ok(TrainReport { epochs, final_loss, optimizer: opt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::transform_feature;

    #[test]
    fn he_uniform_bounds() {
        let mut rng = Rng64::seed_from_u64(1);
        let t: Tensor<f64> = he_uniform(&[1000], 6, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
        assert!(t.max_abs() > 0.9);
    }

    #[test]
    fn named_models_build() {
        let mut rng = Rng64::seed_from_u64(0);
        for name in MODEL_NAMES {
            let net = Network::<f32>::new(NetworkSpec::named(name).unwrap(), &mut rng).unwrap();
            assert!(net.parameter_count() > 0, "{name}");
            assert_eq!(net.num_classes(), if name.starts_with("tiny") { 4 } else { 10 });
        }
        assert!(NetworkSpec::named("resnet").is_err());
    }

    #[test]
    fn backbone_parameter_count() {
        let mut rng = Rng64::seed_from_u64(0);
        let p4 = Network::<f32>::new(NetworkSpec::named("p4").unwrap(), &mut rng).unwrap();
        // 90 lifting weights, 6 group layers of 10*10*4*9, biases and batch-norm affine terms
        assert_eq!(p4.parameter_count(), 90 + 6 * 3600 + 7 * 10 + 6 * 20);
    }

    #[test]
    fn incompatible_layers_are_rejected() {
        let mut rng = Rng64::seed_from_u64(0);
        let mut spec = NetworkSpec::named("tiny-p4").unwrap();
        spec.layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
        assert!(Network::<f64>::new(spec, &mut rng).is_err());
        let mut spec = NetworkSpec::named("tiny-p4").unwrap();
        spec.layers.pop();
        spec.layers.pop();
        assert!(Network::<f64>::new(spec, &mut rng).is_err());
    }

    #[test]
    fn tiny_net_logits_are_rotation_invariant() {
        let mut rng = Rng64::seed_from_u64(5);
        let net = Network::<f64>::new(NetworkSpec::named("tiny-af-p4").unwrap(), &mut rng).unwrap();
        let x = Tensor::from_fn(&[2, 1, 16, 16], |_| rng.random_range(0.0..1.0));
        let base = net.logits(&x).unwrap();
        for h in 1..4 {
            let xr = transform_feature(&net.group, h, &x.reshape(&[2, 1, 1, 16, 16]).unwrap()).unwrap();
            let out = net.logits(&xr.reshape(&[2, 1, 16, 16]).unwrap()).unwrap();
            assert!(base.max_abs_diff(&out).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn batch_norm_normalizes_in_training() {
        let spec = NetworkSpec {
            name: "bn".into(),
            group: GroupName::C4,
            in_channels: 1,
            input_size: 5,
            layers: vec![LayerSpec::conv(3, 3), LayerSpec::BatchNorm, LayerSpec::SpatialMean],
            attention: AttentionConfig::default(),
        };
        let mut rng = Rng64::seed_from_u64(2);
        let net = Network::<f64>::new(spec, &mut rng).unwrap();
        let x = Tensor::from_fn(&[4, 1, 5, 5], |_| rng.random_range(-1.0..1.0));
        let vars = net.params.eager();
        let mut mode = Mode { training: true, rng: &mut rng, record_maps: false };
        let out = net.forward(&mut Eager, &vars, &x, &mut mode).unwrap();
        // per-channel means are zero after normalization
        let m = out.logits.mean_axes(&[0]).unwrap();
        assert!(m.max_abs() < 1e-12);
        assert_eq!(out.batch_stats.len(), 1);
    }
}
