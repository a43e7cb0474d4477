use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gatt_core::attention::{attentive_group_conv, AttentionConfig, ChannelAttentionParams, SpatialAttentionParams};
use gatt_core::autodiff::Rng64;
use gatt_core::gconv::{group_conv, FeatureMapG, GConvLayer};
use gatt_core::tensor::{conv2d, ConvSpec};
use gatt_core::{parallel, FiniteGroup, GroupName, Tensor};
use rand::{Rng, SeedableRng};

fn random(shape: &[usize], rng: &mut Rng64) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

const PATHS: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = Rng64::seed_from_u64(0);
    let x = random(&[8, 16, 32, 32], &mut rng);
    let w = random(&[16, 16, 3, 3], &mut rng);
    let mut group = c.benchmark_group("conv2d");
    for (label, on) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            parallel::set_enabled(on);
            b.iter(|| conv2d(&x, &w, ConvSpec::same()).unwrap())
        });
    }
    group.finish();
    parallel::set_enabled(true);
}

fn bench_group_conv(c: &mut Criterion) {
    let mut rng = Rng64::seed_from_u64(1);
    let mut group = c.benchmark_group("group_conv");
    for name in [GroupName::C4, GroupName::D4] {
        let g = FiniteGroup::new(name);
        let h = g.order();
        let f = FeatureMapG::new(random(&[4, 4, h, 28, 28], &mut rng), name).unwrap();
        let layer = GConvLayer::new(g, random(&[8, 4, h, 3, 3], &mut rng), None, ConvSpec::same()).unwrap();
        for (label, on) in PATHS {
            group.bench_function(BenchmarkId::new(name.to_string(), label), |b| {
                parallel::set_enabled(on);
                b.iter(|| group_conv(&f, &layer).unwrap())
            });
        }
    }
    group.finish();
    parallel::set_enabled(true);
}

fn bench_attentive(c: &mut Criterion) {
    let mut rng = Rng64::seed_from_u64(2);
    let g = FiniteGroup::new(GroupName::C4);
    let f = FeatureMapG::new(random(&[4, 8, 4, 20, 20], &mut rng), GroupName::C4).unwrap();
    let layer = GConvLayer::new(g, random(&[8, 8, 4, 3, 3], &mut rng), None, ConvSpec::same()).unwrap();
    let ch = ChannelAttentionParams::random(4, 8, 2, &mut rng).unwrap();
    let sp = SpatialAttentionParams::random(4, 7, &mut rng).unwrap();
    let mut group = c.benchmark_group("attentive_group_conv");
    group.sample_size(20);
    for (label, on) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            parallel::set_enabled(on);
            b.iter(|| attentive_group_conv(&f, &layer, Some(&ch), Some(&sp), AttentionConfig::default()).unwrap())
        });
    }
    group.finish();
    parallel::set_enabled(true);
}

criterion_group!(benches, bench_conv2d, bench_group_conv, bench_attentive);
criterion_main!(benches);
