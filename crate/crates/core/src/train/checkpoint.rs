//! Binary checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! "MUGN" | u32 version
//! u32 n | n × (str key, str value)                hyperparameters
//! u32 n | n × (str name, u32 b, u32 c, u32 t, f32 × b·c·t)
//! u32 n | n × optimizer: str name, f64 lr, beta1, beta2, eps, u64 t,
//!                        u32 k, k × (array m), k × (array v)
//! u64 rng seed | u64 rng stream | u64 step
//! u64 FNV-1a of every preceding byte
//! ```
//! Strings are a u32 byte length followed by UTF-8; arrays are three u32
//! dims followed by f32 data.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::TrainError;
use crate::params::ParamStore;
use crate::tensor::{AdamConfig, AdamState, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"MUGN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRecord {
    pub name: String,
    pub state: AdamState<f32>,
}

/// Position of the data-order generator: the run seed and the ChaCha
/// stream of the epoch in progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hyper: Vec<(String, String)>,
    pub params: Vec<(String, Tensor<f32>)>,
    pub optimizers: Vec<OptimizerRecord>,
    pub rng: RngState,
    pub step: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn array(&mut self, t: &Tensor<f32>) {
        let s = t.shape();
        self.u32(s.batch);
        self.u32(s.channels);
        self.u32(s.time);
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| TrainError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, TrainError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, TrainError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| TrainError::Checkpoint("invalid UTF-8 string".into()))
    }
    fn array(&mut self) -> Result<Tensor<f32>, TrainError> {
        let shape = Shape::new(self.u32()?, self.u32()?, self.u32()?);
        let n = shape
            .batch
            .checked_mul(shape.channels)
            .and_then(|v| v.checked_mul(shape.time))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| TrainError::Checkpoint("array size overflows".into()))?;
        let data = self
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        w.u32(self.hyper.len());
        for (k, v) in &self.hyper {
            w.str(k);
            w.str(v);
        }
        w.u32(self.params.len());
        for (name, t) in &self.params {
            w.str(name);
            w.array(t);
        }
        w.u32(self.optimizers.len());
        for o in &self.optimizers {
            w.str(&o.name);
            let c = o.state.config;
            for v in [c.lr, c.beta1, c.beta2, c.eps] {
                w.f64(v);
            }
            w.u64(o.state.t);
            w.u32(o.state.m.len());
            for t in o.state.m.iter().chain(&o.state.v) {
                w.array(t);
            }
        }
        w.u64(self.rng.seed);
        w.u64(self.rng.stream);
        w.u64(self.step);
        let sum = fnv1a(&w.0);
        w.u64(sum);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
        if bytes.len() < 8 || &bytes[0..4] != MAGIC {
            return Err(TrainError::Checkpoint(
                "not a checkpoint (bad magic)".into(),
            ));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        if bytes.len() < 16 {
            return Err(TrainError::Checkpoint("truncated file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(TrainError::Checkpoint(
                "checksum mismatch (truncated or corrupt file)".into(),
            ));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let hyper = (0..r.u32()?)
            .map(|_| Ok((r.str()?, r.str()?)))
            .collect::<Result<_, TrainError>>()?;
        let params = (0..r.u32()?)
            .map(|_| Ok((r.str()?, r.array()?)))
            .collect::<Result<_, TrainError>>()?;
        let n_opt = r.u32()?;
        let mut optimizers = Vec::new();
        for _ in 0..n_opt {
            let name = r.str()?;
            let config = AdamConfig {
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            let t = r.u64()?;
            let k = r.u32()?;
            let m = (0..k).map(|_| r.array()).collect::<Result<_, _>>()?;
            let v = (0..k).map(|_| r.array()).collect::<Result<_, _>>()?;
            optimizers.push(OptimizerRecord {
                name,
                state: AdamState { config, t, m, v },
            });
        }
        let rng = RngState {
            seed: r.u64()?,
            stream: r.u64()?,
        };
        let step = r.u64()?;
        if r.pos != body.len() {
            return Err(TrainError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            hyper,
            params,
            optimizers,
            rng,
            step,
        })
    }

    pub fn hyper(&self, key: &str) -> Option<&str> {
        self.hyper
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Parameters whose names start with `prefix`, in stored order.
    pub fn param_store(&self, prefix: &str) -> ParamStore<f32> {
        let mut store = ParamStore::new();
        for (name, t) in self.params.iter().filter(|(n, _)| n.starts_with(prefix)) {
            store.push(name.clone(), t.clone());
        }
        store
    }

    pub fn optimizer(&self, name: &str) -> Option<&AdamState<f32>> {
        self.optimizers
            .iter()
            .find(|o| o.name == name)
            .map(|o| &o.state)
    }
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn save_checkpoint(path: impl AsRef<Path>, c: &Checkpoint) -> Result<(), TrainError> {
    let path = path.as_ref();
    let io = |e| TrainError::Io(path.display().to_string(), e);
    let mut tmp_name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&c.to_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TrainError::Io(path.display().to_string(), e))?;
    Checkpoint::from_bytes(&bytes)
}
