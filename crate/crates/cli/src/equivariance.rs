use gatt_core::autodiff::Rng64;
use gatt_core::config::RunConfig;
use gatt_core::group::transform_feature;
use gatt_core::tensor::{pad_zero, Element};
use gatt_core::{FiniteGroup, Result, Tensor};
use rand::SeedableRng;

use crate::report::{EquivarianceReport, ErrorTable};
use crate::stack::{uniform, RandomStack, IN_CHANNELS};

/// Integer shifts `(dy, dx)` checked alongside the point group.
pub const TRANSLATIONS: [(isize, isize); 3] = [(0, 1), (1, 0), (2, -1)];

pub fn default_tolerance<T: Element>() -> f64 {
    if T::DTYPE.size() == 8 { 1e-10 } else { 1e-4 }
}

fn diffs<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs().to_f64()).collect()
}

/// Compares `Φ(L_g x)` with `L_g Φ(x)` for every `h ∈ H` and a few integer
/// translations over `config.trials` random stacks.
///
/// The random content fills an `input_size` square surrounded by a zero
/// margin wide enough that shifted content never meets the border effects,
/// which keeps globally pooled attention statistics shift invariant. Rotations
/// are compared on the whole frame; translations drop the border band that
/// the shift and the layers' receptive fields reach.
pub fn check_equivariance<T: Element>(config: &RunConfig, pose_bias: bool) -> Result<EquivarianceReport> {
    let group = FiniteGroup::new(config.group);
    let tolerance = config.tolerance.unwrap_or_else(default_tolerance::<T>);
    let mut table = ErrorTable::default();
    for trial in 0..config.trials {
        let seed = config.seed.wrapping_add(trial as u64);
        let stack = RandomStack::<T>::new(
            group.clone(),
            config.variant,
            config.attention(),
            config.depth,
            config.filter_size,
            seed,
            pose_bias,
        );
        let shift = TRANSLATIONS.iter().map(|&(a, b)| a.unsigned_abs().max(b.unsigned_abs())).max().unwrap_or(0);
        let reach = stack.depth() * stack.radius();
        let margin = shift + 2 * reach;
        let mut rng = Rng64::seed_from_u64(seed ^ 0x5eed);
        let inner: Tensor<T> = uniform(&[2, IN_CHANNELS, 1, config.input_size, config.input_size], 1.0, &mut rng);
        let x = pad_zero(&inner, margin)?;
        let y = stack.forward(&x)?;
        for h in group.elements().skip(1) {
            let lhs = stack.forward(&transform_feature(&group, h, &x)?)?;
            let rhs = transform_feature(&group, h, &y)?;
            table.add(&group.label(h), 0, diffs(&lhs, &rhs).into_iter());
        }
        let crop = shift + reach;
        for &(dy, dx) in &TRANSLATIONS {
            let lhs = stack.forward(&x.translate_spatial(dy, dx)?)?.crop_spatial(crop)?;
            let rhs = y.translate_spatial(dy, dx)?.crop_spatial(crop)?;
            table.add(&format!("t({dy},{dx})"), crop, diffs(&lhs, &rhs).into_iter());
        }
    }
    Ok(EquivarianceReport::new(table.finish(), T::DTYPE, tolerance))
}
