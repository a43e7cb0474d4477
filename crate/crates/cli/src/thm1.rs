use std::fmt;
use std::str::FromStr;

use gatt_core::attention::{
    channel_attention_op, channel_attention_with, channel_stats_op, spatial_attention_op, spatial_stats_op, AttentionConfig,
};
use gatt_core::autodiff::Rng64;
use gatt_core::config::RunConfig;
use gatt_core::gconv::{intermediate_op, DEFAULT_MEMORY_CAP};
use gatt_core::group::transform_feature;
use gatt_core::ops::{Eager, Ops};
use gatt_core::tensor::{ConvSpec, Element};
use gatt_core::{Error, FiniteGroup, Result, Tensor};
use rand::SeedableRng;

use crate::equivariance::default_tolerance;
use crate::report::{EquivarianceReport, ErrorTable};
use crate::stack::{uniform, SPATIAL_K};

/// Deliberate equivariance breakers for the attention operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Thm1Control {
    #[default]
    None,
    /// Channel kernels picked by the absolute pose `h̃` instead of `h⁻¹h̃`.
    BrokenW,
    /// An offset that depends on `h` added to the responses before pooling.
    PoseBias,
}

impl FromStr for Thm1Control {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Thm1Control::None),
            "broken-w" => Ok(Thm1Control::BrokenW),
            "bias" | "pose-bias" => Ok(Thm1Control::PoseBias),
            other => Err(Error::InvalidArgument(format!("unknown control '{other}' (none, broken-w, bias)"))),
        }
    }
}

impl fmt::Display for Thm1Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Thm1Control::None => "none",
            Thm1Control::BrokenW => "broken-w",
            Thm1Control::PoseBias => "bias",
        })
    }
}

struct Case<T> {
    name: &'static str,
    input: Tensor<T>,
    filter: Tensor<T>,
    w1: Tensor<T>,
    w2: Tensor<T>,
    psi: Tensor<T>,
    pose_bias: Tensor<T>,
}

/// `(α_C, α_X)` of one attentive layer, computed step by step so the
/// controls can be spliced in.
fn maps<T: Element>(
    group: &FiniteGroup,
    case: &Case<T>,
    input: &Tensor<T>,
    config: AttentionConfig,
    control: Thm1Control,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut ops = Eager;
    let mut ft = intermediate_op(&mut ops, group, input, &case.filter, ConvSpec::same(), DEFAULT_MEMORY_CAP)?;
    if control == Thm1Control::PoseBias {
        ft = ops.add(&ft, &case.pose_bias)?;
    }
    let s = ft.shape().to_vec();
    let (n, o, c, h, hin) = (s[0], s[1], s[2], s[3], s[4]);
    let gate = config.gate();
    let (avg, max) = channel_stats_op(&mut ops, &ft, config.pool_out_channels)?;
    let alpha_c = if control == Thm1Control::BrokenW && hin > 1 {
        let pairs: Vec<usize> = (0..h).flat_map(|_| 0..hin).collect();
        channel_attention_with(&mut ops, &avg, &max, &case.w1, &case.w2, gate, &pairs, h)?
    } else {
        channel_attention_op(&mut ops, group, &avg, &max, &case.w1, &case.w2, gate)?
    };
    let lead = if config.pool_out_channels { [n, 1] } else { [n, o] };
    let view = alpha_c.reshape(&[lead[0], lead[1], c, h, hin, 1, 1])?;
    let modulated = ops.mul(&ft, &view)?;
    let s_x = spatial_stats_op(&mut ops, &modulated, config.pool_out_channels)?;
    let alpha_x = spatial_attention_op(&mut ops, group, &s_x, &case.psi, gate)?;
    Ok((alpha_c, alpha_x))
}

fn cases<T: Element>(group: &FiniteGroup, size: usize, seed: u64) -> Vec<Case<T>> {
    let mut rng = Rng64::seed_from_u64(seed);
    let h = group.order();
    let (c, o, k) = (2, 3, 3);
    let make = |name, hin: usize, input: Option<Tensor<T>>, rng: &mut Rng64| Case {
        name,
        input: input.unwrap_or_else(|| uniform(&[2, c, hin, size, size], 1.0, rng)),
        filter: uniform(&[o, c, hin, k, k], 0.5, rng),
        w1: uniform(&[hin, 1, c], 1.0, rng),
        w2: uniform(&[hin, c, 1], 1.0, rng),
        psi: uniform(&[1, 2, hin, SPATIAL_K, SPATIAL_K], 0.3, rng),
        pose_bias: Tensor::from_fn(&[1, 1, 1, h, 1, 1, 1], |i| T::from_f64(0.3 * i[3] as f64)),
    };
    vec![
        make("group", h, None, &mut rng),
        make("lifting", 1, None, &mut rng),
        make("constant", h, Some(Tensor::full(&[2, c, h, size, size], T::from_f64(0.7))), &mut rng),
    ]
}

/// For every `ḡ ∈ H`, checks `A[L_ḡ f](h, h̃) = A[f](ḡ⁻¹h, ḡ⁻¹h̃)` for the
/// channel map and, with the spatial relabeling, for the spatial map.
pub fn thm1_oracle<T: Element>(config: &RunConfig, control: Thm1Control) -> Result<EquivarianceReport> {
    let group = FiniteGroup::new(config.group);
    let tolerance = config.tolerance.unwrap_or_else(default_tolerance::<T>);
    let att = config.attention();
    let mut table = ErrorTable::default();
    for trial in 0..config.trials.max(1) {
        for case in cases::<T>(&group, config.input_size, config.seed.wrapping_add(trial as u64)) {
            let (ac, ax) = maps(&group, &case, &case.input, att, control)?;
            for g in group.elements().skip(1) {
                let moved = transform_feature(&group, g, &case.input)?;
                let (mc, mx) = maps(&group, &case, &moved, att, control)?;
                let ic = group.action_index(g, ac.shape(), &[2, 3], false)?;
                let ix = group.action_index(g, ax.shape(), &[2, 3], true)?;
                let rc = ac.gather(&ic, ac.shape())?;
                let rx = ax.gather(&ix, ax.shape())?;
                let label = group.label(g);
                let d = |a: &Tensor<T>, b: &Tensor<T>| -> Vec<f64> {
                    a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs().to_f64()).collect()
                };
                table.add(&format!("{}/alpha_c/{label}", case.name), 0, d(&rc, &mc).into_iter());
                table.add(&format!("{}/alpha_x/{label}", case.name), 0, d(&rx, &mx).into_iter());
            }
        }
    }
    Ok(EquivarianceReport::new(table.finish(), T::DTYPE, tolerance))
}
