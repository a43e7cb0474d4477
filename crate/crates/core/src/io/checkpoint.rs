//! `GATT` checkpoints: a little-endian container holding a parameter
//! manifest, raw tensor buffers and optional optimizer state.
//!
//! ```text
//! "GATT" | version u32 | dtype u32 (0 = f32, 1 = f64) | model str
//! | residual u8 | pool_out u8 | tensor count u32
//! | per tensor: name str, decay u8, rank u32, dims u64 * rank
//! | optimizer u8 (0 none, 1 adam, 2 sgd) [+ hyperparameters f64s, lr f64, wd f64, step u64]
//! | tensor data in manifest order
//! ```
//! Strings are a u32 byte length followed by UTF-8.

use std::path::Path;

use crate::autodiff::{OptimizerKind, OptimizerState};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"GATT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub decay: bool,
    pub tensor: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerMeta {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: String,
    pub residual_branch: bool,
    pub pool_out_channels: bool,
    pub tensors: Vec<NamedTensor<T>>,
    pub optimizer: Option<OptimizerMeta>,
}

const PARAM: &str = "param/";
const BUFFER: &str = "buffer/";
const FIRST: &str = "moment1/";
const SECOND: &str = "moment2/";

impl<T: Element> Checkpoint<T> {
    pub fn from_network(net: &Network<T>, opt: Option<&OptimizerState<T>>) -> Self {
        let mut tensors: Vec<NamedTensor<T>> = net
            .params
            .iter()
            .map(|p| NamedTensor { name: format!("{PARAM}{}", p.name), decay: p.decay, tensor: p.value.clone() })
            .collect();
        tensors.extend(
            net.buffers.iter().enumerate().map(|(i, b)| NamedTensor { name: format!("{BUFFER}{i}"), decay: false, tensor: b.clone() }),
        );
        let optimizer = opt.map(|o| {
            for (prefix, bufs) in [(FIRST, &o.first), (SECOND, &o.second)] {
                tensors.extend(net.params.iter().zip(bufs).map(|(p, b)| NamedTensor {
                    name: format!("{prefix}{}", p.name),
                    decay: false,
                    tensor: b.clone(),
                }));
            }
            OptimizerMeta { kind: o.kind, lr: o.lr, weight_decay: o.weight_decay, step: o.step }
        });
        Checkpoint {
            model: net.spec.name.clone(),
            residual_branch: net.spec.attention.residual_branch,
            pool_out_channels: net.spec.attention.pool_out_channels,
            tensors,
            optimizer,
        }
    }

    fn with_prefix(&self, prefix: &str) -> Vec<&NamedTensor<T>> {
        self.tensors.iter().filter(|t| t.name.starts_with(prefix)).collect()
    }

    /// Copies parameters and buffers into a network of the same layout.
    pub fn restore(&self, net: &mut Network<T>) -> Result<()> {
        let params = self.with_prefix(PARAM);
        if params.len() != net.params.len() {
            return Err(Error::shape(format!("checkpoint has {} parameters, network {}", params.len(), net.params.len())));
        }
        for (dst, src) in net.params.iter().zip(&params) {
            if src.name[PARAM.len()..] != dst.name {
                return Err(Error::invalid(format!("parameter {} found where {} was expected", &src.name[PARAM.len()..], dst.name)));
            }
        }
        net.params.set_values(params.iter().map(|t| t.tensor.clone()).collect())?;
        let buffers = self.with_prefix(BUFFER);
        if buffers.len() != net.buffers.len() || buffers.iter().zip(&net.buffers).any(|(a, b)| a.tensor.shape() != b.shape()) {
            return Err(Error::shape("checkpoint buffers do not match the network"));
        }
        net.buffers = buffers.into_iter().map(|t| t.tensor.clone()).collect();
        Ok(())
    }

    pub fn optimizer_state(&self) -> Option<OptimizerState<T>> {
        self.optimizer.as_ref().map(|m| OptimizerState {
            kind: m.kind,
            lr: m.lr,
            weight_decay: m.weight_decay,
            step: m.step,
            first: self.with_prefix(FIRST).into_iter().map(|t| t.tensor.clone()).collect(),
            second: self.with_prefix(SECOND).into_iter().map(|t| t.tensor.clone()).collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(T::DTYPE as u32).to_le_bytes());
        put_str(&mut out, &self.model);
        out.push(self.residual_branch as u8);
        out.push(self.pool_out_channels as u8);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.push(t.decay as u8);
            out.extend_from_slice(&(t.tensor.rank() as u32).to_le_bytes());
            for &d in t.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        match &self.optimizer {
            None => out.push(0),
            Some(m) => {
                let hyper: Vec<f64> = match m.kind {
                    OptimizerKind::Adam { beta1, beta2, eps } => {
                        out.push(1);
                        vec![beta1, beta2, eps]
                    }
                    OptimizerKind::Sgd { momentum } => {
                        out.push(2);
                        vec![momentum]
                    }
                };
                for v in hyper.into_iter().chain([m.lr, m.weight_decay]) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&m.step.to_le_bytes());
            }
        }
        for t in &self.tensors {
            for &v in t.tensor.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("not a GATT checkpoint".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let dtype = match r.u32()? {
            0 => DType::F32,
            1 => DType::F64,
            d => return Err(format!("unknown dtype tag {d}")),
        };
        if dtype != T::DTYPE {
            return Err(format!("checkpoint holds {} tensors, {} requested", dtype.name(), T::DTYPE.name()));
        }
        let model = r.string()?;
        let residual_branch = r.u8()? != 0;
        let pool_out_channels = r.u8()? != 0;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let decay = r.u8()? != 0;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            manifest.push((name, decay, dims));
        }
        let optimizer = match r.u8()? {
            0 => None,
            tag @ (1 | 2) => {
                let kind = if tag == 1 {
                    OptimizerKind::Adam { beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? }
                } else {
                    OptimizerKind::Sgd { momentum: r.f64()? }
                };
                Some(OptimizerMeta { kind, lr: r.f64()?, weight_decay: r.f64()?, step: r.u64()? })
            }
            t => return Err(format!("unknown optimizer tag {t}")),
        };
        let size = T::DTYPE.size();
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, decay, dims) in manifest {
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("dimension overflow")?;
            let raw = r.take(n.checked_mul(size).ok_or("dimension overflow")?)?;
            let data = raw.chunks_exact(size).map(T::read_le).collect();
            let tensor = Tensor::new(&dims, data).map_err(|e| e.to_string())?;
            tensors.push(NamedTensor { name, decay, tensor });
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Checkpoint { model, residual_branch, pool_out_channels, tensors, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::format(path, msg))
    }
}

/// Reads only the dtype tag, to pick the element type before a full load.
pub fn peek_dtype(path: impl AsRef<Path>) -> Result<DType> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a GATT checkpoint"));
    }
    match u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) {
        0 => Ok(DType::F32),
        1 => Ok(DType::F64),
        d => Err(Error::format(path, format!("unknown dtype tag {d}"))),
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 name".to_string())
    }
}
