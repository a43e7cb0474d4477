use std::sync::Arc;

use gatt_core::attention::{attentive_op, input_attention_op, AttentionConfig, AttentionVariant, AttentionVars};
use gatt_core::autodiff::{finite_diff_grad, max_relative_error, Rng64, Tape, Var};
use gatt_core::config::RunConfig;
use gatt_core::data::synth_shapes;
use gatt_core::gconv::{gconv_op, DEFAULT_MEMORY_CAP};
use gatt_core::nn::{LayerSpec, Mode, Network, NetworkSpec};
use gatt_core::ops::Ops;
use gatt_core::tensor::{BinaryOp, ConvSpec, Padding, ReduceMode, UnaryOp};
use gatt_core::{FiniteGroup, GroupName, Result, Tensor};
use rand::{Rng, SeedableRng};

use crate::report::Report;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

type Objective = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

struct Case {
    name: String,
    params: Vec<Tensor<f64>>,
    f: Objective,
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Rng64::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn case(name: impl Into<String>, params: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Case {
    Case { name: name.into(), params, f: Box::new(f) }
}

/// Contracts the output with a fixed random tensor so every coordinate
/// reaches the scalar objective.
fn objective(f: &Objective, tape: &mut Tape<f64>, vars: &[Var]) -> Result<Var> {
    let out = f(tape, vars)?;
    let w = tape.constant(random(&tape.shape(&out), 777));
    let p = tape.mul(&out, &w)?;
    tape.sum_all(&p)
}

/// Worst relative error between the tape gradient and central differences.
fn check(c: &Case) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = c.params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = objective(&c.f, &mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(&c.params)
        .map(|(v, p)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    let numeric = finite_diff_grad(
        |ps| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.leaf(p.clone())).collect();
            let l = objective(&c.f, &mut t, &vs)?;
            Ok(t.value(&l).data()[0])
        },
        &c.params,
        STEP,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

fn cases(seed: u64) -> Vec<Case> {
    let r = |shape: &[usize], k: u64| random(shape, seed.wrapping_mul(1000).wrapping_add(k));
    let mut v = Vec::new();
    for op in [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul] {
        v.push(case(format!("binary-{op:?}"), vec![r(&[2, 3, 4], 1), r(&[2, 1, 4], 2)], move |t, x| t.binary(&x[0], &x[1], op)));
    }
    let unary = [
        UnaryOp::Relu,
        UnaryOp::Sigmoid,
        UnaryOp::ResidualGate,
        UnaryOp::Neg,
        UnaryOp::Square,
        UnaryOp::Affine { scale: -1.5, shift: 0.25 },
    ];
    for op in unary {
        v.push(case(format!("unary-{op:?}"), vec![r(&[3, 5], 3)], move |t, x| t.unary(&x[0], op)));
    }
    let positive = r(&[3, 5], 4).map(|x| x.abs() + 0.5);
    v.push(case("unary-Rsqrt", vec![positive], |t, x| t.unary(&x[0], UnaryOp::Rsqrt)));
    for mode in [ReduceMode::Sum, ReduceMode::Mean, ReduceMode::Max] {
        v.push(case(format!("reduce-{mode:?}"), vec![r(&[2, 3, 4], 5)], move |t, x| t.reduce(&x[0], &[0, 2], mode)));
    }
    v.push(case("reshape", vec![r(&[2, 6], 6)], |t, x| t.reshape(&x[0], &[3, 4])));
    v.push(case("permute", vec![r(&[2, 3, 4], 7)], |t, x| t.permute(&x[0], &[2, 0, 1])));
    let index: Arc<[usize]> = vec![0, 5, 5, 2, 1, 0, 3].into();
    v.push(case("gather", vec![r(&[6], 8)], move |t, x| t.gather(&x[0], index.clone(), &[7])));
    v.push(case("concat", vec![r(&[2, 1, 3], 9), r(&[2, 2, 3], 10)], |t, x| t.concat(&[&x[0], &x[1]], 1)));
    v.push(case("max_pool2d", vec![r(&[1, 2, 5, 6], 11)], |t, x| t.max_pool2d(&x[0], 2, 2)));
    for (name, spec, k, groups) in [
        ("conv2d-same", ConvSpec::same(), 3, 1),
        ("conv2d-stride2", ConvSpec { stride: 2, padding: Padding::Same, groups: 1 }, 3, 1),
        ("conv2d-grouped-valid", ConvSpec { groups: 2, ..ConvSpec::valid() }, 3, 2),
    ] {
        v.push(case(name, vec![r(&[2, 4, 6, 7], 13), r(&[6, 4 / groups, k, k], 14)], move |t, x| t.conv2d(&x[0], &x[1], spec)));
    }
    v.push(case("cross_entropy", vec![r(&[4, 3], 15).scale(3.0)], |t, x| t.cross_entropy(&x[0], &[0, 2, 1, 2])));

    for name in [GroupName::C4, GroupName::D4] {
        let g = FiniteGroup::new(name);
        let h = g.order();
        let gl = g.clone();
        v.push(case(format!("lift_conv-{name}"), vec![r(&[1, 2, 1, 5, 5], 16), r(&[3, 2, 1, 3, 3], 17), r(&[3], 18)], move |t, x| {
            gconv_op(t, &gl, &x[0], &x[1], Some(&x[2]), ConvSpec::same())
        }));
        v.push(case(format!("group_conv-{name}"), vec![r(&[1, 2, h, 4, 4], 19), r(&[2, 2, h, 3, 3], 20)], move |t, x| {
            gconv_op(t, &g, &x[0], &x[1], None, ConvSpec::valid())
        }));
    }

    let g = FiniteGroup::new(GroupName::C4);
    for (variant, pool) in [(AttentionVariant::Full, true), (AttentionVariant::Full, false)] {
        let config = AttentionConfig { variant, pool_out_channels: pool, ..AttentionConfig::default() };
        let params = vec![
            r(&[2, 4, 4, 5, 5], 21),
            r(&[3, 4, 4, 3, 3], 22),
            r(&[3], 23),
            r(&[4, 2, 4], 24),
            r(&[4, 4, 2], 25),
            r(&[1, 2, 4, 3, 3], 26),
        ];
        let g = g.clone();
        v.push(case(format!("attentive_group_conv-full-pool{pool}"), params, move |t, x| {
            let att = AttentionVars { w1: Some(&x[3]), w2: Some(&x[4]), psi: Some(&x[5]) };
            Ok(attentive_op(t, &g, &x[0], &x[1], Some(&x[2]), &att, ConvSpec::same(), config, DEFAULT_MEMORY_CAP)?.out)
        }));
    }
    let gi = g.clone();
    let params = vec![r(&[2, 4, 4, 5, 5], 32), r(&[4, 2, 4], 33), r(&[4, 4, 2], 34), r(&[1, 2, 4, 3, 3], 35)];
    v.push(case("input_attention", params, move |t, x| {
        let att = AttentionVars { w1: Some(&x[1]), w2: Some(&x[2]), psi: Some(&x[3]) };
        Ok(input_attention_op(t, &gi, &x[0], &att, UnaryOp::ResidualGate)?.out)
    }));

    let mut spec = NetworkSpec::named("tiny-af-p4").expect("named model");
    spec.layers.insert(1, LayerSpec::BatchNorm);
    spec.layers.insert(6, LayerSpec::Dropout { rate: 0.2 });
    let net = Network::<f64>::new(spec, &mut Rng64::seed_from_u64(seed)).expect("tiny net builds");
    let set = synth_shapes(3, seed);
    let (images, labels) = set.batch::<f64>(&[0, 1, 2]);
    let params = net.params.values();
    v.push(case("network-tiny-af-p4-batchnorm-dropout", params, move |t, x| {
        // a fixed dropout stream keeps the objective deterministic
        let mut rng = Rng64::seed_from_u64(5);
        let mut mode = Mode { training: true, rng: &mut rng, record_maps: false };
        let input = t.constant(images.clone());
        let fwd = net.forward(t, x, &input, &mut mode)?;
        t.cross_entropy(&fwd.logits, &labels)
    }));
    v
}

/// Backward vs central differences on every primitive and on micro-nets up
/// to a full attentive network. Always runs in double precision.
pub fn gradcheck(config: &RunConfig) -> Result<Report> {
    let tolerance = config.tolerance.unwrap_or(TOLERANCE);
    let mut report = Report::new("gradcheck");
    report.push("dtype", "f64");
    report.push("step", format!("{STEP:e}"));
    report.push("tolerance", format!("{tolerance:e}"));
    let mut worst = 0.0f64;
    for c in cases(config.seed) {
        let err = check(&c)?;
        let err = if err.is_nan() { f64::INFINITY } else { err };
        report.push(format!("relative_error[{}]", c.name), format!("{err:e}"));
        worst = worst.max(err);
    }
    report.push("max_relative_error", format!("{worst:e}"));
    report.pass = worst <= tolerance;
    Ok(report)
}
