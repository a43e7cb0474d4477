mod support;

use gatt_core::attention::{
    attentive_group_conv, channel_attention, channel_attention_with, channel_stats, input_attention,
    modulate_and_reduce, pair_index, residual_gate, spatial_attention, spatial_stats, AttentionConfig,
    AttentionVariant, ChannelAttentionParams, SpatialAttentionParams,
};
use gatt_core::autodiff::Rng64;
use gatt_core::gconv::{group_conv, intermediate_responses, lift_conv, FeatureMapG, GConvLayer, IntermediateResponses};
use gatt_core::group::{make_group, transform_feature, FiniteGroup};
use gatt_core::ops::Eager;
use gatt_core::tensor::{ConvSpec, UnaryOp};
use gatt_core::{GroupName, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use support::{max_diff, random, relabel};

struct Setup {
    g: FiniteGroup,
    layer: GConvLayer<f64>,
    ch: ChannelAttentionParams<f64>,
    sp: SpatialAttentionParams<f64>,
}

fn setup(name: GroupName, lifting: bool, seed: u64) -> Setup {
    let g = make_group(name);
    let hin = if lifting { 1 } else { g.order() };
    let mut rng = Rng64::seed_from_u64(seed);
    let layer = GConvLayer::new(g.clone(), random(&[3, 4, hin, 3, 3], seed), Some(random(&[3], seed + 1)), ConvSpec::same()).unwrap();
    let ch = ChannelAttentionParams::random(hin, 4, 2, &mut rng).unwrap();
    let sp = SpatialAttentionParams::random(hin, 5, &mut rng).unwrap();
    Setup { g, layer, ch, sp }
}

fn input(s: &Setup, lifting: bool, size: usize, seed: u64) -> FeatureMapG<f64> {
    let hin = if lifting { 1 } else { s.g.order() };
    FeatureMapG::new(random(&[1, 4, hin, size, size], seed), s.g.name()).unwrap()
}

fn config(variant: AttentionVariant, residual: bool, pool: bool) -> AttentionConfig {
    AttentionConfig { variant, residual_branch: residual, pool_out_channels: pool }
}

fn moved(s: &Setup, h: usize, f: &FeatureMapG<f64>) -> FeatureMapG<f64> {
    FeatureMapG::new(transform_feature(&s.g, h, &f.tensor).unwrap(), f.group).unwrap()
}

#[test]
fn attentive_conv_is_equivariant() {
    for name in [GroupName::C4, GroupName::D4] {
        for lifting in [true, false] {
            let s = setup(name, lifting, 3);
            let f = input(&s, lifting, 7, 4);
            for variant in [AttentionVariant::Full, AttentionVariant::Channel, AttentionVariant::Spatial] {
                for pool in [true, false] {
                    let cfg = config(variant, true, pool);
                    let (base, _) = attentive_group_conv(&f, &s.layer, Some(&s.ch), Some(&s.sp), cfg).unwrap();
                    for h in s.g.elements() {
                        let lhs = transform_feature(&s.g, h, &base.tensor).unwrap();
                        let (rhs, _) = attentive_group_conv(&moved(&s, h, &f), &s.layer, Some(&s.ch), Some(&s.sp), cfg).unwrap();
                        let d = max_diff(&lhs, &rhs.tensor);
                        assert!(d <= 1e-10, "{name} lifting={lifting} {variant:?} pool={pool} h={h}: {d}");
                    }
                }
            }
        }
    }
}

#[test]
fn attention_maps_obey_pair_relabeling() {
    for name in [GroupName::C4, GroupName::D4] {
        for lifting in [true, false] {
            let s = setup(name, lifting, 11);
            let f = input(&s, lifting, 6, 12);
            let cfg = AttentionConfig::default();
            let (_, maps) = attentive_group_conv(&f, &s.layer, Some(&s.ch), Some(&s.sp), cfg).unwrap();
            let (ac, ax) = (maps.alpha_c.unwrap(), maps.alpha_x.unwrap());
            for h in s.g.elements() {
                let (_, m) = attentive_group_conv(&moved(&s, h, &f), &s.layer, Some(&s.ch), Some(&s.sp), cfg).unwrap();
                let ic = s.g.action_index(h, ac.shape(), &[2, 3], false).unwrap();
                let ix = s.g.action_index(h, ax.shape(), &[2, 3], true).unwrap();
                assert!(max_diff(&relabel(&ac, &ic), &m.alpha_c.unwrap()) <= 1e-10);
                assert!(max_diff(&relabel(&ax, &ix), &m.alpha_x.unwrap()) <= 1e-10);
            }
        }
    }
}

#[test]
fn absolute_kernel_indexing_breaks_the_law() {
    let s = setup(GroupName::C4, false, 21);
    let f = input(&s, false, 6, 22);
    let h = s.g.order();
    let broken: Vec<usize> = (0..h).flat_map(|_| 0..h).collect();
    let alpha = |f: &FeatureMapG<f64>, pairs: &[usize]| {
        let ft = intermediate_responses(f, &s.layer).unwrap();
        let (a, m) = channel_stats(&ft).unwrap();
        channel_attention_with(&mut Eager, &a, &m, &s.ch.w1, &s.ch.w2, UnaryOp::ResidualGate, pairs, h).unwrap()
    };
    let good = pair_index(&s.g, h, h).unwrap();
    let mut worst_good: f64 = 0.0;
    let mut worst_broken: f64 = 0.0;
    for r in s.g.elements() {
        let fm = moved(&s, r, &f);
        for (pairs, worst) in [(&good, &mut worst_good), (&broken, &mut worst_broken)] {
            let base = alpha(&f, pairs);
            let idx = s.g.action_index(r, base.shape(), &[2, 3], false).unwrap();
            *worst = worst.max(max_diff(&relabel(&base, &idx), &alpha(&fm, pairs)));
        }
    }
    assert!(worst_good <= 1e-10);
    assert!(worst_broken > 1e-3, "negative control passed: {worst_broken}");
}

#[test]
fn zero_parameters_scale_the_plain_output() {
    for lifting in [true, false] {
        let s = setup(GroupName::C4, lifting, 5);
        let mut layer = s.layer.clone();
        layer.bias = None;
        let hin = if lifting { 1 } else { 4 };
        let ch = ChannelAttentionParams::zeros(hin, 4, 2).unwrap();
        let sp = SpatialAttentionParams::zeros(hin, 7).unwrap();
        let f = input(&s, lifting, 6, 6);
        let plain = if lifting { lift_conv(&f, &layer) } else { group_conv(&f, &layer) }.unwrap().tensor;
        for (variant, factor) in
            [(AttentionVariant::Full, 0.25), (AttentionVariant::Channel, 0.5), (AttentionVariant::Spatial, 0.5)]
        {
            for residual in [true, false] {
                let (out, maps) = attentive_group_conv(&f, &layer, Some(&ch), Some(&sp), config(variant, residual, true)).unwrap();
                assert!(max_diff(&out.tensor, &plain.scale(factor)) <= 1e-12);
                for m in [maps.alpha_c, maps.alpha_x].into_iter().flatten() {
                    assert!(m.data().iter().all(|&v| v == 0.5));
                }
            }
        }
    }
}

#[test]
fn maps_forced_to_one_reproduce_group_conv_bitwise() {
    for name in [GroupName::C4, GroupName::D4] {
        let s = setup(name, false, 8);
        let f = input(&s, false, 5, 9);
        let plain = group_conv(&f, &s.layer).unwrap().tensor;
        let ft = intermediate_responses(&f, &s.layer).unwrap();
        let h = s.g.order();
        let ones_c = Tensor::<f64>::ones(&[1, 4, h, h]);
        let ones_x = Tensor::<f64>::ones(&[1, 1, h, h, 5, 5]);
        let bias = s.layer.bias.as_ref();
        let full = modulate_and_reduce(&ft, Some(&ones_c), Some(&ones_x), bias).unwrap();
        assert_eq!(full.data(), plain.data());
        let channel_only = modulate_and_reduce(&ft, Some(&ones_c), None, bias).unwrap();
        assert_eq!(channel_only.data(), plain.data());
    }
}

#[test]
fn modulation_reduction_hand_example() {
    // one output channel, two input channels, trivial group, 1x2 plane
    let ft = Tensor::<f64>::from_f64_slice(&[1, 1, 2, 1, 1, 1, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let ac = Tensor::<f64>::from_f64_slice(&[1, 2, 1, 1], &[0.5, 0.25]).unwrap();
    let ax = Tensor::<f64>::from_f64_slice(&[1, 1, 1, 1, 1, 2], &[1.0, 0.5]).unwrap();
    let bias = Tensor::<f64>::from_f64_slice(&[1], &[10.0]).unwrap();
    let out = modulate_and_reduce(&IntermediateResponses { tensor: ft }, Some(&ac), Some(&ax), Some(&bias)).unwrap();
    assert_eq!(out.shape(), &[1, 1, 1, 1, 2]);
    assert_eq!(out.data(), &[10.0 + 0.5 + 0.75, 10.0 + 0.5 + 0.5]);
}

#[test]
fn channel_stats_examples() {
    let g = make_group(GroupName::C4);
    let constant = IntermediateResponses { tensor: Tensor::<f64>::full(&[1, 2, 3, 4, 4, 5, 5], 0.3) };
    let (a, m) = channel_stats(&constant).unwrap();
    assert_eq!(a.shape(), &[1, 3, 4, 4]);
    assert!(a.data().iter().chain(m.data()).all(|&v| (v - 0.3).abs() < 1e-15));

    let mut spike = Tensor::<f64>::zeros(&[1, 2, 3, 4, 4, 5, 5]);
    spike.set(&[0, 1, 2, 3, 1, 2, 4], 7.0);
    let (a, m) = channel_stats(&IntermediateResponses { tensor: spike }).unwrap();
    assert_eq!(m.get(&[0, 2, 3, 1]), 7.0);
    assert!((a.get(&[0, 2, 3, 1]) - 7.0 / (5.0 * 5.0 * 2.0)).abs() < 1e-15);
    assert_eq!(a.get(&[0, 0, 3, 1]), 0.0);

    let ft = intermediate_responses(
        &FeatureMapG::new(random(&[2, 2, 4, 5, 5], 1), GroupName::C4).unwrap(),
        &GConvLayer::new(g, random(&[3, 2, 4, 3, 3], 2), None, ConvSpec::same()).unwrap(),
    )
    .unwrap();
    let (a, m) = channel_stats(&ft).unwrap();
    assert!(a.data().iter().zip(m.data()).all(|(x, y)| x <= y));
}

#[test]
fn spatial_stats_match_loop_oracle() {
    let ft = random(&[1, 2, 3, 2, 2, 3, 3], 31);
    let s = spatial_stats(&IntermediateResponses { tensor: ft.clone() }).unwrap();
    assert_eq!(s.shape(), &[1, 2, 2, 2, 3, 3]);
    for h in 0..2 {
        for ht in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    let vals: Vec<f64> =
                        (0..2).flat_map(|o| (0..3).map(move |c| (o, c))).map(|(o, c)| ft.get(&[0, o, c, h, ht, y, x])).collect();
                    let mean = vals.iter().sum::<f64>() / 6.0;
                    let max = vals.iter().cloned().fold(f64::MIN, f64::max);
                    assert!((s.get(&[0, 0, h, ht, y, x]) - mean).abs() < 1e-14);
                    assert_eq!(s.get(&[0, 1, h, ht, y, x]), max);
                }
            }
        }
    }
    let single = random(&[1, 1, 1, 1, 1, 3, 3], 2);
    let s = spatial_stats(&IntermediateResponses { tensor: single.clone() }).unwrap();
    assert_eq!(&s.data()[..9], single.data());
    assert_eq!(&s.data()[9..], single.data());
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn trivial_group_channel_attention_is_a_plain_bottleneck() {
    let g = make_group(GroupName::C1);
    let mut rng = Rng64::seed_from_u64(4);
    let p = ChannelAttentionParams::<f64>::random(1, 4, 2, &mut rng).unwrap();
    let avg = random(&[2, 4, 1, 1], 5);
    let max = random(&[2, 4, 1, 1], 6);
    let cfg = config(AttentionVariant::Channel, false, true);
    let a = channel_attention(&avg, &max, &p, &g, cfg).unwrap();
    for n in 0..2 {
        let branch = |s: &Tensor<f64>, c: usize| -> f64 {
            let hidden: Vec<f64> = (0..2)
                .map(|j| (0..4).map(|i| p.w1.get(&[0, j, i]) * s.get(&[n, i, 0, 0])).sum::<f64>().max(0.0))
                .collect();
            (0..2).map(|j| p.w2.get(&[0, c, j]) * hidden[j]).sum()
        };
        for c in 0..4 {
            let expect = sigmoid(branch(&avg, c) + branch(&max, c));
            assert!((a.get(&[n, c, 0, 0]) - expect).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_filters_give_half_maps() {
    let g = make_group(GroupName::D4);
    let cfg = config(AttentionVariant::Full, false, true);
    let a = channel_attention(&random(&[1, 4, 8, 8], 1), &random(&[1, 4, 8, 8], 2), &ChannelAttentionParams::zeros(8, 4, 4).unwrap(), &g, cfg).unwrap();
    assert!(a.data().iter().all(|&v| v == 0.5));
    let x = spatial_attention(&random(&[1, 2, 8, 8, 5, 5], 3), &SpatialAttentionParams::zeros(8, 7).unwrap(), &g, cfg).unwrap();
    assert!(x.data().iter().all(|&v| v == 0.5));
}

#[test]
fn reduction_ratio_must_divide_channels() {
    assert!(ChannelAttentionParams::<f64>::zeros(4, 6, 4).is_err());
    assert!(ChannelAttentionParams::<f64>::zeros(4, 6, 0).is_err());
    assert!(SpatialAttentionParams::<f64>::zeros(4, 4).is_err());
}

#[test]
fn residual_gate_values() {
    let z = Tensor::<f64>::from_f64_slice(&[3], &[0.0, 40.0, -40.0]).unwrap();
    let r = residual_gate(&z);
    assert_eq!(r.get(&[0]), 0.5);
    assert!(r.get(&[1]) < 1e-15);
    assert!((r.get(&[2]) - 1.0).abs() < 1e-15);
}

#[test]
fn input_attention_is_equivariant() {
    for name in [GroupName::C4, GroupName::D4] {
        let g = make_group(name);
        let h = g.order();
        let mut rng = Rng64::seed_from_u64(9);
        for planar in [true, false] {
            let gext = if planar { 1 } else { h };
            let ch = ChannelAttentionParams::random(gext, 4, 2, &mut rng).unwrap();
            let sp = SpatialAttentionParams::random(gext, 5, &mut rng).unwrap();
            let f = FeatureMapG::new(random(&[2, 4, gext, 7, 7], 10), name).unwrap();
            let cfg = AttentionConfig::default();
            let (base, maps) = input_attention(&f, &g, Some(&ch), Some(&sp), cfg).unwrap();
            assert!(maps.alpha_c.unwrap().data().iter().chain(maps.alpha_x.unwrap().data()).all(|v| (0.0..=1.0).contains(v)));
            for r in g.elements() {
                let fm = FeatureMapG::new(transform_feature(&g, r, &f.tensor).unwrap(), name).unwrap();
                let (out, _) = input_attention(&fm, &g, Some(&ch), Some(&sp), cfg).unwrap();
                let d = max_diff(&transform_feature(&g, r, &base.tensor).unwrap(), &out.tensor);
                assert!(d <= 1e-10, "{name} planar={planar} r={r}: {d}");
            }
        }
    }
}

#[test]
fn input_attention_zero_parameters_quarter_the_input() {
    let g = make_group(GroupName::C4);
    let f = FeatureMapG::new(random(&[1, 4, 4, 5, 5], 3), GroupName::C4).unwrap();
    let ch = ChannelAttentionParams::zeros(4, 4, 2).unwrap();
    let sp = SpatialAttentionParams::zeros(4, 3).unwrap();
    let (out, _) = input_attention(&f, &g, Some(&ch), Some(&sp), AttentionConfig::default()).unwrap();
    assert_eq!(out.tensor.data(), f.tensor.scale(0.25).data());
}

#[test]
fn trivial_group_input_attention_is_channel_then_spatial() {
    let g = make_group(GroupName::C1);
    let mut rng = Rng64::seed_from_u64(12);
    let ch = ChannelAttentionParams::<f64>::random(1, 4, 2, &mut rng).unwrap();
    let sp = SpatialAttentionParams::<f64>::random(1, 3, &mut rng).unwrap();
    let x = random(&[1, 4, 1, 5, 5], 13);
    let f = FeatureMapG::new(x.clone(), GroupName::C1).unwrap();
    let cfg = config(AttentionVariant::Full, false, true);
    let (out, _) = input_attention(&f, &g, Some(&ch), Some(&sp), cfg).unwrap();

    let avg = x.mean_axes(&[3, 4]).unwrap().into_shape(&[1, 4, 1, 1]).unwrap();
    let max = x.max_axes(&[3, 4]).unwrap().into_shape(&[1, 4, 1, 1]).unwrap();
    let ac = channel_attention(&avg, &max, &ch, &g, cfg).unwrap().into_shape(&[1, 4, 1, 1, 1]).unwrap();
    let x1 = x.mul(&ac).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let stat = |a: usize, b: usize| -> (f64, f64) {
                let v: Vec<f64> = (0..4).map(|c| x1.get(&[0, c, 0, a, b])).collect();
                (v.iter().sum::<f64>() / 4.0, v.iter().cloned().fold(f64::MIN, f64::max))
            };
            let mut z = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    let (yi, xj) = (i as i64 + a as i64 - 1, j as i64 + b as i64 - 1);
                    if (0..5).contains(&yi) && (0..5).contains(&xj) {
                        let (m, mx) = stat(yi as usize, xj as usize);
                        z += sp.psi.get(&[0, 0, 0, a, b]) * m + sp.psi.get(&[0, 1, 0, a, b]) * mx;
                    }
                }
            }
            for c in 0..4 {
                let expect = x1.get(&[0, c, 0, i, j]) * sigmoid(z);
                assert!((out.tensor.get(&[0, c, 0, i, j]) - expect).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn missing_parameters_are_reported() {
    let s = setup(GroupName::C4, false, 1);
    let f = input(&s, false, 5, 2);
    assert!(attentive_group_conv(&f, &s.layer, None, Some(&s.sp), AttentionConfig::default()).is_err());
    let cfg = config(AttentionVariant::Channel, true, true);
    assert!(attentive_group_conv(&f, &s.layer, None, Some(&s.sp), cfg).is_err());
    let cfg = config(AttentionVariant::Spatial, true, true);
    assert!(attentive_group_conv(&f, &s.layer, None, Some(&s.sp), cfg).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn maps_stay_in_unit_interval(seed in 0u64..10_000, scale in 0.1f64..50.0, residual in any::<bool>(), pool in any::<bool>()) {
        let s = setup(GroupName::C4, false, seed);
        let f = FeatureMapG::new(random(&[1, 4, 4, 5, 5], seed + 3).scale(scale), GroupName::C4).unwrap();
        let (_, maps) = attentive_group_conv(&f, &s.layer, Some(&s.ch), Some(&s.sp), config(AttentionVariant::Full, residual, pool)).unwrap();
        for m in [maps.alpha_c.unwrap(), maps.alpha_x.unwrap()] {
            prop_assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn attentive_conv_equivariance_holds_for_random_draws(seed in 0u64..10_000, size in 3usize..7, d4 in any::<bool>()) {
        let name = if d4 { GroupName::D4 } else { GroupName::C4 };
        let s = setup(name, false, seed);
        let f = input(&s, false, size, seed + 1);
        let cfg = AttentionConfig::default();
        let (base, _) = attentive_group_conv(&f, &s.layer, Some(&s.ch), Some(&s.sp), cfg).unwrap();
        for h in s.g.elements() {
            let (out, _) = attentive_group_conv(&moved(&s, h, &f), &s.layer, Some(&s.ch), Some(&s.sp), cfg).unwrap();
            prop_assert!(max_diff(&transform_feature(&s.g, h, &base.tensor).unwrap(), &out.tensor) <= 1e-10);
        }
    }
}
