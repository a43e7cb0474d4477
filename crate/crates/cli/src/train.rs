use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use gatt_core::attention::AttentionVariant;
use gatt_core::autodiff::Rng64;
use gatt_core::config::{DatasetKind, NetVariant, RunConfig};
use gatt_core::data::{make_rotmnist, synth_shapes, LabeledImageSet, Split};
use gatt_core::io::Checkpoint;
use gatt_core::nn::{train, Network, NetworkSpec, TrainConfig};
use gatt_core::tensor::Element;
use gatt_core::{Error, GroupName, Result};
use rand::SeedableRng;

use crate::report::Report;

/// Named architecture for a dataset, group and variant, unless `model` is set.
pub fn model_name(config: &RunConfig) -> Result<String> {
    if let Some(m) = &config.model {
        return Ok(m.clone());
    }
    use AttentionVariant::*;
    use NetVariant::*;
    let name = match (config.dataset, config.group, config.variant) {
        (DatasetKind::Shapes, GroupName::C4, Plain) => "tiny-p4",
        (DatasetKind::Shapes, GroupName::C4, Attentive(Full)) => "tiny-a-p4",
        (DatasetKind::Shapes, GroupName::C4, Input) => "tiny-af-p4",
        (DatasetKind::RotMnist, GroupName::C4, Plain) => "p4",
        (DatasetKind::RotMnist, GroupName::C4, Attentive(Full)) => "a-p4",
        (DatasetKind::RotMnist, GroupName::C4, Attentive(Channel)) => "ach-p4",
        (DatasetKind::RotMnist, GroupName::C4, Attentive(Spatial)) => "asp-p4",
        (DatasetKind::RotMnist, GroupName::C4, Input) => "af-p4",
        (DatasetKind::RotMnist, GroupName::D4, Plain) => "p4m",
        (DatasetKind::RotMnist, GroupName::D4, Input) => "af-p4m",
        (d, g, v) => {
            return Err(Error::InvalidArgument(format!("no model for dataset {d:?}, group {g} and variant {v}; set `model`")))
        }
    };
    Ok(name.to_string())
}

/// `(train, validation, test)` for the configured dataset. The synthetic
/// test set comes from an independent seed; one tenth of the training
/// draw is held out for validation (one sixth for rot-MNIST, 2k of 12k).
pub fn datasets(config: &RunConfig) -> Result<(LabeledImageSet, LabeledImageSet, LabeledImageSet)> {
    match config.dataset {
        DatasetKind::Shapes => {
            let mut train = synth_shapes(config.train_size, config.seed);
            let val = train.split_off(config.train_size / 10, Split::Validation)?;
            let test = synth_shapes(config.test_size, config.seed.wrapping_add(0x9e37_79b9));
            Ok((train, val, test))
        }
        DatasetKind::RotMnist => {
            let (mut train, test) = make_rotmnist(None, config.train_size, config.test_size, config.seed)?;
            let val = train.split_off(config.train_size / 6, Split::Validation)?;
            Ok((train, val, test))
        }
    }
}

pub fn build_network<T: Element>(config: &RunConfig) -> Result<Network<T>> {
    let mut spec = NetworkSpec::named(&model_name(config)?)?;
    spec.attention.residual_branch = config.residual_branch;
    spec.attention.pool_out_channels = config.pool_out_channels;
    Network::new(spec, &mut Rng64::seed_from_u64(config.seed))
}

/// Trains, logs one line per epoch to stdout and `out/train.log`, saves
/// `out/model.gatt`, and reports the test error.
pub fn run_training<T: Element>(config: &RunConfig, out: Option<&Path>, quiet: bool) -> Result<(Report, Network<T>)> {
    let start = Instant::now();
    let (train_set, val_set, test_set) = datasets(config)?;
    let mut net = build_network::<T>(config)?;
    let size = train_set.image_shape()[1];
    if size != net.spec.input_size {
        return Err(Error::InvalidArgument(format!(
            "model {} expects {}x{} inputs but the dataset has {size}x{size}",
            net.spec.name, net.spec.input_size, net.spec.input_size
        )));
    }
    let mut log_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
            let path = dir.join("train.log");
            Some((std::fs::File::create(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?, path))
        }
        None => None,
    };
    let tc = TrainConfig {
        epochs: config.epochs,
        batch: config.batch,
        lr: config.lr,
        weight_decay: 1e-4,
        seed: config.seed,
        lr_decay: None,
        time_limit: config.time_limit.map(Duration::from_secs_f64),
    };
    let mut io_error = None;
    let outcome = train(&mut net, &train_set, Some(&val_set), &tc, |e| {
        if !quiet {
            println!("{e}");
        }
        if let Some((f, path)) = &mut log_file {
            if let Err(err) = writeln!(f, "{e}") {
                io_error.get_or_insert(Error::Io { path: path.clone(), source: err });
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let (test_loss, test_acc) = net.evaluate(&test_set, config.batch.max(1))?;
    let mut report = Report::new("train");
    report.push("model", &net.spec.name);
    report.push("dtype", T::DTYPE.name());
    report.push("parameters", net.parameter_count());
    report.push("train_samples", train_set.len());
    report.push("test_samples", test_set.len());
    report.push("epochs_run", outcome.epochs.len());
    report.push("final_loss", format!("{:.6}", outcome.final_loss));
    report.push("test_loss", format!("{test_loss:.6}"));
    report.push("test_accuracy", format!("{test_acc:.4}"));
    report.push("test_error", format!("{:.4}", 1.0 - test_acc));
    report.push("seconds", format!("{:.1}", start.elapsed().as_secs_f64()));
    if let Some(dir) = out {
        let path = dir.join("model.gatt");
        Checkpoint::from_network(&net, Some(&outcome.optimizer)).save(&path)?;
        report.push("checkpoint", path.display());
        if let Some((mut f, _)) = log_file {
            let _ = writeln!(f, "test_error={:.4}", 1.0 - test_acc);
        }
    }
    Ok((report, net))
}
