//! Plain-text run configuration: `key = value` lines, `#` starts a comment.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `group` | `p4` | `c1`/`z2`, `c2`/`p2`, `c4`/`p4`, `d4`/`p4m` |
//! | `variant` | `full` | `plain`, `full`, `channel`, `spatial`, `input` |
//! | `filter_size` | `3` | odd spatial kernel size |
//! | `reduction_ratio` | `2` | channel-attention bottleneck ratio |
//! | `lr` | `0.001` | Adam learning rate |
//! | `epochs` | `100` | training epochs |
//! | `batch` | `128` | batch size |
//! | `seed` | `0` | RNG seed |
//! | `dtype` | `f64` | `f32` or `f64` |
//! | `residual_branch` | `true` | gate with `1 - σ` instead of `σ` |
//! | `pool_out_channels` | `true` | share attention maps across output channels |
//! | `model` | unset | named architecture for `train` |
//! | `depth` | `3` | layers in random verification stacks |
//! | `trials` | `5` | random seeds per verification |
//! | `tolerance` | unset | override of the command's pass threshold |
//! | `input_size` | `32` | spatial size for verification inputs |
//! | `train_size` / `test_size` | `2000` / `400` | dataset sizes |
//! | `dataset` | `shapes` | `shapes` or `rotmnist` |
//! | `time_limit` | unset | training wall-clock budget in seconds |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::attention::{AttentionConfig, AttentionVariant};
use crate::error::{Error, Result};
use crate::group::GroupName;
use crate::tensor::DType;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetVariant {
    Plain,
    Attentive(AttentionVariant),
    Input,
}

impl FromStr for NetVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" | "none" => Ok(NetVariant::Plain),
            "input" => Ok(NetVariant::Input),
            other => other.parse().map(NetVariant::Attentive),
        }
    }
}

impl fmt::Display for NetVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetVariant::Plain => "plain",
            NetVariant::Input => "input",
            NetVariant::Attentive(AttentionVariant::Full) => "full",
            NetVariant::Attentive(AttentionVariant::Channel) => "channel",
            NetVariant::Attentive(AttentionVariant::Spatial) => "spatial",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Shapes,
    RotMnist,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub group: GroupName,
    pub variant: NetVariant,
    pub filter_size: usize,
    pub reduction_ratio: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub dtype: DType,
    pub residual_branch: bool,
    pub pool_out_channels: bool,
    pub model: Option<String>,
    pub depth: usize,
    pub trials: usize,
    pub tolerance: Option<f64>,
    pub input_size: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub dataset: DatasetKind,
    pub time_limit: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            group: GroupName::C4,
            variant: NetVariant::Attentive(AttentionVariant::Full),
            filter_size: 3,
            reduction_ratio: 2,
            lr: 1e-3,
            epochs: 100,
            batch: 128,
            seed: 0,
            dtype: DType::F64,
            residual_branch: true,
            pool_out_channels: true,
            model: None,
            depth: 3,
            trials: 5,
            tolerance: None,
            input_size: 32,
            train_size: 2000,
            test_size: 400,
            dataset: DatasetKind::Shapes,
            time_limit: None,
        }
    }
}

impl RunConfig {
    pub fn attention(&self) -> AttentionConfig {
        let variant = match self.variant {
            NetVariant::Attentive(v) => v,
            _ => AttentionVariant::Full,
        };
        AttentionConfig { variant, residual_branch: self.residual_branch, pool_out_channels: self.pool_out_channels }
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<N: FromStr>(v: &str) -> std::result::Result<N, String> {
            v.parse().map_err(|_| format!("cannot parse '{v}' as a number"))
        }
        fn flag(v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(format!("expected a boolean, got '{v}'")),
            }
        }
        match key {
            "group" => self.group = value.parse().map_err(|e: Error| e.to_string())?,
            "variant" => self.variant = value.parse().map_err(|e: Error| e.to_string())?,
            "filter_size" => {
                let k: usize = num(value)?;
                if k.is_multiple_of(2) {
                    return Err(format!("filter_size must be odd, got {k}"));
                }
                self.filter_size = k;
            }
            "reduction_ratio" => self.reduction_ratio = num(value)?,
            "lr" => self.lr = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "batch" => self.batch = num(value)?,
            "seed" => self.seed = num(value)?,
            "dtype" => self.dtype = value.parse().map_err(|e: Error| e.to_string())?,
            "residual_branch" => self.residual_branch = flag(value)?,
            "pool_out_channels" => self.pool_out_channels = flag(value)?,
            "model" => self.model = Some(value.to_string()),
            "depth" => self.depth = num(value)?,
            "trials" => self.trials = num(value)?,
            "tolerance" => self.tolerance = Some(num(value)?),
            "input_size" => self.input_size = num(value)?,
            "train_size" => self.train_size = num(value)?,
            "test_size" => self.test_size = num(value)?,
            "dataset" => {
                self.dataset = match value {
                    "shapes" | "synth" => DatasetKind::Shapes,
                    "rotmnist" => DatasetKind::RotMnist,
                    _ => return Err(format!("unknown dataset '{value}'")),
                }
            }
            "time_limit" => self.time_limit = Some(num(value)?),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config { line: i + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        Ok(cfg)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text)
}
