use std::path::Path;

use gatt_core::autodiff::Rng64;
use gatt_core::config::RunConfig;
use gatt_core::data::synth_shapes;
use gatt_core::group::transform_feature;
use gatt_core::io::{read_pgm, write_attention_montage, Checkpoint};
use gatt_core::nn::{Network, NetworkSpec};
use gatt_core::tensor::Element;
use gatt_core::{Error, Result, Tensor};
use rand::SeedableRng;

use crate::equivariance::default_tolerance;
use crate::report::{EquivarianceReport, ErrorTable, Report};

/// Rebuilds the named network stored in a checkpoint.
pub fn load_network<T: Element>(path: &Path) -> Result<Network<T>> {
    let ck = Checkpoint::<T>::load(path)?;
    let mut spec = NetworkSpec::named(&ck.model)?;
    spec.attention.residual_branch = ck.residual_branch;
    spec.attention.pool_out_channels = ck.pool_out_channels;
    let mut net = Network::new(spec, &mut Rng64::seed_from_u64(0))?;
    ck.restore(&mut net)?;
    Ok(net)
}

/// The spatial map of attention layer `layer` (counted among attention
/// layers) and the pose axes it carries.
fn spatial_map<T: Element>(net: &Network<T>, image: &Tensor<T>, layer: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let maps = net.attention_maps(image)?;
    let count = maps.len();
    let m = maps.into_iter().nth(layer).ok_or_else(|| {
        Error::InvalidArgument(format!("layer {layer} has no attention; model {} has {count} attention layer(s)", net.spec.name))
    })?;
    let a = m.alpha_x.ok_or_else(|| Error::InvalidArgument(format!("attention layer {layer} has no spatial map")))?;
    let axes = if a.rank() == 5 { vec![2] } else { vec![2, 3] };
    Ok((a, axes))
}

/// Per-element check that the maps of `L_h x` equal `L_h` applied to the
/// maps of `x`.
pub fn map_equivariance<T: Element>(net: &Network<T>, image: &Tensor<T>, layer: usize, tolerance: f64) -> Result<EquivarianceReport> {
    let g = &net.group;
    let (base, axes) = spatial_map(net, image, layer)?;
    let mut table = ErrorTable::default();
    for h in g.elements().skip(1) {
        let moved = transform_planar(net, image, h)?;
        let (m, _) = spatial_map(net, &moved, layer)?;
        let idx = g.action_index(h, base.shape(), &axes, true)?;
        let expect = base.gather(&idx, base.shape())?;
        table.add(&g.label(h), 0, m.data().iter().zip(expect.data()).map(|(&a, &b)| (a - b).abs().to_f64()));
    }
    Ok(EquivarianceReport::new(table.finish(), T::DTYPE, tolerance))
}

fn transform_planar<T: Element>(net: &Network<T>, image: &Tensor<T>, h: usize) -> Result<Tensor<T>> {
    let s = image.shape().to_vec();
    let lifted = image.reshape(&[s[0], s[1], 1, s[2], s[3]])?;
    transform_feature(&net.group, h, &lifted)?.reshape(&s)
}

/// Emits one montage per group element (input plus every `α_X` plane) and
/// reports whether the maps transform with the input.
pub fn attend<T: Element>(checkpoint: &Path, image: Option<&Path>, layer: usize, config: &RunConfig, out: Option<&Path>) -> Result<Report> {
    let net = load_network::<T>(checkpoint)?;
    let n = net.spec.input_size;
    let plane = match image {
        Some(p) => read_pgm(p)?,
        None => synth_shapes(1, config.seed).images.reshape(&[n, n])?,
    };
    if plane.shape() != [n, n] {
        return Err(Error::InvalidArgument(format!("model {} expects a {n}x{n} image, got {:?}", net.spec.name, plane.shape())));
    }
    let x: Tensor<T> = plane.cast::<T>().reshape(&[1, 1, n, n])?;
    let tolerance = config.tolerance.unwrap_or_else(default_tolerance::<T>);
    let eq = map_equivariance(&net, &x, layer, tolerance)?;
    let mut report = eq.to_report("attend");
    report.push("model", &net.spec.name);
    report.push("layer", layer);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        for h in net.group.elements() {
            let moved = transform_planar(&net, &x, h)?;
            let (a, _) = spatial_map(&net, &moved, layer)?;
            let s = a.shape();
            let (y, w) = (s[s.len() - 2], s[s.len() - 1]);
            let panels = a.len() / (s[0] * y * w);
            let first = Tensor::new(&[panels, y, w], a.data()[..panels * y * w].to_vec())?;
            let name = net.group.label(h).replace('·', "_");
            write_attention_montage(&first, &moved.reshape(&[n, n])?, dir.join(format!("attend_layer{layer}_{name}.pgm")))?;
        }
        report.push("montages", net.group.order());
    }
    Ok(report)
}
