//! Random-weight layer stacks used by the verification commands.

use gatt_core::attention::{attentive_op, input_attention_op, AttentionConfig, AttentionVars};
use gatt_core::autodiff::Rng64;
use gatt_core::config::NetVariant;
use gatt_core::gconv::{gconv_op, DEFAULT_MEMORY_CAP};
use gatt_core::ops::{Eager, Ops};
use gatt_core::tensor::{ConvSpec, Element};
use gatt_core::{FiniteGroup, Result, Tensor};
use rand::{Rng, SeedableRng};

pub const IN_CHANNELS: usize = 2;
pub const WIDTH: usize = 4;
pub const SPATIAL_K: usize = 5;

pub fn uniform<T: Element>(shape: &[usize], scale: f64, rng: &mut Rng64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-scale..scale)))
}

struct Attention<T> {
    w1: Tensor<T>,
    w2: Tensor<T>,
    psi: Tensor<T>,
}

impl<T: Element> Attention<T> {
    fn random(extent: usize, channels: usize, reduction: usize, rng: &mut Rng64) -> Self {
        let hidden = (channels / reduction).max(1);
        Attention {
            w1: uniform(&[extent, hidden, channels], 1.0, rng),
            w2: uniform(&[extent, channels, hidden], 1.0, rng),
            psi: uniform(&[1, 2, extent, SPATIAL_K, SPATIAL_K], 0.3, rng),
        }
    }

    fn vars(&self) -> AttentionVars<'_, Tensor<T>> {
        AttentionVars { w1: Some(&self.w1), w2: Some(&self.w2), psi: Some(&self.psi) }
    }
}

struct Layer<T> {
    filter: Tensor<T>,
    bias: Tensor<T>,
    attention: Option<Attention<T>>,
    input_attention: Option<Attention<T>>,
    /// Offset that differs across the pose axis; only set for the negative control.
    pose_bias: Option<Tensor<T>>,
}

/// `depth` same-padded group convolutions with ReLUs in between; the first
/// lifts planar input. The variant decides where attention sits.
pub struct RandomStack<T> {
    pub group: FiniteGroup,
    pub variant: NetVariant,
    pub config: AttentionConfig,
    pub k: usize,
    layers: Vec<Layer<T>>,
}

impl<T: Element> RandomStack<T> {
    pub fn new(
        group: FiniteGroup,
        variant: NetVariant,
        config: AttentionConfig,
        depth: usize,
        k: usize,
        seed: u64,
        pose_bias: bool,
    ) -> Self {
        let mut rng = Rng64::seed_from_u64(seed);
        let h = group.order();
        let layers = (0..depth)
            .map(|i| {
                let (c, hin) = if i == 0 { (IN_CHANNELS, 1) } else { (WIDTH, h) };
                let scale = (3.0 / (c * hin * k * k) as f64).sqrt();
                let attention = matches!(variant, NetVariant::Attentive(_)).then(|| Attention::random(hin, c, 2, &mut rng));
                let input_attention = (variant == NetVariant::Input).then(|| Attention::random(hin, c, 2, &mut rng));
                Layer {
                    filter: uniform(&[WIDTH, c, hin, k, k], scale, &mut rng),
                    bias: uniform(&[WIDTH], 0.1, &mut rng),
                    attention,
                    input_attention,
                    pose_bias: pose_bias.then(|| uniform(&[1, WIDTH, h, 1, 1], 0.5, &mut rng)),
                }
            })
            .collect();
        RandomStack { group, variant, config, k, layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Spatial reach of one layer, the widest kernel it applies.
    pub fn radius(&self) -> usize {
        let att = !matches!(self.variant, NetVariant::Plain);
        if att { (self.k / 2).max(SPATIAL_K / 2) } else { self.k / 2 }
    }

    /// `[N, C_in, 1, Y, X]` planar input to `[N, WIDTH, |H|, Y, X]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut ops = Eager;
        let mut f = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                f = ops.relu(&f)?;
            }
            if let Some(a) = &layer.input_attention {
                f = input_attention_op(&mut ops, &self.group, &f, &a.vars(), self.config.gate())?.out;
            }
            f = match &layer.attention {
                Some(a) => {
                    attentive_op(
                        &mut ops,
                        &self.group,
                        &f,
                        &layer.filter,
                        Some(&layer.bias),
                        &a.vars(),
                        ConvSpec::same(),
                        self.config,
                        DEFAULT_MEMORY_CAP,
                    )?
                    .out
                }
                None => gconv_op(&mut ops, &self.group, &f, &layer.filter, Some(&layer.bias), ConvSpec::same())?,
            };
            if let Some(b) = &layer.pose_bias {
                f = ops.add(&f, b)?;
            }
        }
        Ok(f)
    }
}
