use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gatt_cli::thm1::Thm1Control;
use gatt_cli::{attend, equivariance, gradcheck, parity, thm1, train, Report, EXIT_FAIL, EXIT_PASS, EXIT_USAGE};
use gatt_core::config::{load_config, RunConfig};
use gatt_core::{DType, Error, Result};

#[derive(Parser)]
#[command(name = "gatt", version, about = "Equivariance verifiers, training and attention maps for group convolutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// f32 or f64.
    #[arg(long, global = true)]
    dtype: Option<String>,
    /// p4, p4m, c1 or c2.
    #[arg(long, global = true)]
    group: Option<String>,
    /// plain, full, channel, spatial or input.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Directory for reports, images and checkpoints.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Any configuration key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Random-weight stacks commute with rotations, reflections and shifts.
    CheckEquivariance {
        /// Add a pose-dependent bias that must break equivariance.
        #[arg(long)]
        control: bool,
    },
    /// Attention maps of a transformed input are relabeled maps.
    Thm1Oracle {
        /// none, broken-w or bias.
        #[arg(long, default_value = "none")]
        control: Thm1Control,
    },
    /// Strided vs pooled downsampling on even and odd input sizes.
    ParityDemo,
    /// Backward pass against central finite differences.
    Gradcheck,
    /// Train a named model and save a checkpoint.
    Train,
    /// Dump attention-map montages of a checkpoint for every transformed input.
    Attend {
        #[arg(long)]
        checkpoint: PathBuf,
        /// PGM image; a synthetic shape is used when absent.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Index among the model's attention layers.
        #[arg(long, default_value_t = 0)]
        layer: usize,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let seed = common.seed.map(|s| s.to_string());
    let flags = [("seed", &seed), ("dtype", &common.dtype), ("group", &common.group), ("variant", &common.variant)];
    let pairs = flags.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())));
    let extra = common.set.iter().map(|kv| match kv.split_once('=') {
        Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
        None => Err(Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{kv}'"))),
    });
    for pair in pairs.map(Ok).chain(extra) {
        let (k, v) = pair?;
        config.set(&k, &v).map_err(|msg| Error::InvalidArgument(format!("--{k}: {msg}")))?;
    }
    Ok(config)
}

macro_rules! by_dtype {
    ($dtype:expr, $f:ident($($arg:expr),*)) => {
        match $dtype {
            DType::F32 => $f::<f32>($($arg),*),
            DType::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn run(cli: &Cli) -> Result<Report> {
    let config = resolve(&cli.common)?;
    let out = cli.common.out.as_deref();
    let report = match &cli.command {
        Command::CheckEquivariance { control } => {
            use equivariance::check_equivariance;
            let mut r = by_dtype!(config.dtype, check_equivariance(&config, *control))?.to_report("check-equivariance");
            r.push("group", config.group);
            r.push("variant", config.variant);
            r.push("depth", config.depth);
            r.push("trials", config.trials);
            r.push("negative_control", control);
            r
        }
        Command::Thm1Oracle { control } => {
            use thm1::thm1_oracle;
            let mut r = by_dtype!(config.dtype, thm1_oracle(&config, *control))?.to_report("thm1-oracle");
            r.push("group", config.group);
            r.push("negative_control", control);
            r
        }
        Command::ParityDemo => {
            use parity::parity_demo;
            by_dtype!(config.dtype, parity_demo(&config, out))?
        }
        Command::Gradcheck => gradcheck::gradcheck(&config)?,
        Command::Train => {
            use train::run_training;
            match config.dtype {
                DType::F32 => run_training::<f32>(&config, out, false)?.0,
                DType::F64 => run_training::<f64>(&config, out, false)?.0,
            }
        }
        Command::Attend { checkpoint, image, layer } => {
            use attend::attend;
            let dtype = gatt_core::io::peek_dtype(checkpoint)?;
            by_dtype!(dtype, attend(checkpoint, image.as_deref(), *layer, &config, out))?
        }
    };
    if let Some(dir) = out {
        report.save(dir)?;
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::from(if report.pass { EXIT_PASS } else { EXIT_FAIL } as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
