use gatt_core::attention::{attentive_group_conv, AttentionConfig, ChannelAttentionParams, SpatialAttentionParams};
use gatt_core::autodiff::Rng64;
use gatt_core::gconv::{group_conv, FeatureMapG, GConvLayer};
use gatt_core::tensor::{conv2d, max_pool2d, ConvSpec};
use gatt_core::{parallel, FiniteGroup, GroupName, Tensor};
use rand::{Rng, SeedableRng};

fn random(shape: &[usize], rng: &mut Rng64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn sequential_and_parallel_paths_agree_bitwise() {
    let mut rng = Rng64::seed_from_u64(5);
    let x = random(&[3, 4, 11, 11], &mut rng);
    let w = random(&[6, 4, 3, 3], &mut rng);
    let g = FiniteGroup::new(GroupName::D4);
    let f = FeatureMapG::new(random(&[2, 4, 8, 9, 9], &mut rng), GroupName::D4).unwrap();
    let layer = GConvLayer::new(g.clone(), random(&[4, 4, 8, 3, 3], &mut rng), None, ConvSpec::same()).unwrap();
    let ch = ChannelAttentionParams::random(8, 4, 2, &mut rng).unwrap();
    let sp = SpatialAttentionParams::random(8, 5, &mut rng).unwrap();

    let run = || {
        (
            conv2d(&x, &w, ConvSpec::same()).unwrap(),
            conv2d(&x, &w, ConvSpec { stride: 2, ..ConvSpec::valid() }).unwrap(),
            max_pool2d(&x, 3, 2).unwrap(),
            group_conv(&f, &layer).unwrap().tensor,
            attentive_group_conv(&f, &layer, Some(&ch), Some(&sp), AttentionConfig::default()).unwrap().0.tensor,
        )
    };
    parallel::set_enabled(false);
    let sequential = run();
    parallel::set_enabled(true);
    let par = run();
    assert!(sequential == par);
}
