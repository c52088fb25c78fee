//! Single-file checkpoint archive.
//!
//! Layout: the 6-byte magic `FEGAN1`, a little-endian `u32` header length, a
//! JSON header, then every tensor as little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamStore, SpectralState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"FEGAN1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    step: u64,
    fingerprint: String,
    config: TrainConfig,
    counters: BTreeMap<String, u64>,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to evaluate or resume a training stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub fingerprint: String,
    pub config: TrainConfig,
    /// Optimizer step counts and similar integers.
    pub counters: BTreeMap<String, u64>,
    /// Named tensors in insertion order.
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, step: u64) -> Self {
        Self { step, fingerprint: config.fingerprint(), config, counters: BTreeMap::new(), tensors: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn add_params(&mut self, prefix: &str, store: &ParamStore<f32>) {
        for (name, t) in store.iter() {
            self.insert(format!("{prefix}/{name}"), t.clone());
        }
    }

    pub fn load_params(&self, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
        store.load_from(|name| self.get(&format!("{prefix}/{name}")).cloned())
    }

    pub fn add_adam(&mut self, prefix: &str, names: &ParamStore<f32>, adam: &Adam<f32>) {
        self.counters.insert(format!("{prefix}.step"), adam.step);
        for ((name, _), (m, v)) in names.iter().zip(adam.m.iter().zip(&adam.v)) {
            self.insert(format!("{prefix}.m/{name}"), m.clone());
            self.insert(format!("{prefix}.v/{name}"), v.clone());
        }
    }

    pub fn load_adam(&self, prefix: &str, names: &ParamStore<f32>, adam: &mut Adam<f32>) -> Result<()> {
        adam.step = *self
            .counters
            .get(&format!("{prefix}.step"))
            .ok_or_else(|| Error::Checkpoint(format!("missing counter {prefix}.step")))?;
        for (i, (name, p)) in names.iter().enumerate() {
            for (kind, slot) in [("m", &mut adam.m[i]), ("v", &mut adam.v[i])] {
                let key = format!("{prefix}.{kind}/{name}");
                let t = self.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
                if t.shape() != p.shape() {
                    return Err(Error::Checkpoint(format!("{key}: shape {:?}, expected {:?}", t.shape(), p.shape())));
                }
                *slot = t.clone();
            }
        }
        Ok(())
    }

    pub fn add_spectral(&mut self, state: &SpectralState<f32>) {
        for (i, u) in state.u.iter().enumerate() {
            self.insert(format!("sn/{i}"), u.clone());
        }
    }

    pub fn load_spectral(&self, state: &mut SpectralState<f32>) -> Result<()> {
        for (i, u) in state.u.iter_mut().enumerate() {
            let t = self.get(&format!("sn/{i}")).ok_or_else(|| Error::Checkpoint(format!("missing tensor sn/{i}")))?;
            if t.shape() != u.shape() {
                return Err(Error::Checkpoint(format!("sn/{i}: shape {:?}, expected {:?}", t.shape(), u.shape())));
            }
            *u = t.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: FORMAT_VERSION,
            step: self.step,
            fingerprint: self.fingerprint.clone(),
            config: self.config.clone(),
            counters: self.counters.clone(),
            tensors: self.tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.numel() * 4).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let len_at = MAGIC.len();
        let hlen = u32::from_le_bytes(bytes[len_at..len_at + 4].try_into().expect("4 bytes")) as usize;
        let body = len_at + 4;
        let header_bytes = bytes.get(body..body + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(header_bytes).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", header.version)));
        }
        let mut at = body + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes.get(at..at + 4 * n).ok_or_else(|| Error::Checkpoint(format!("truncated tensor {}", entry.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push((entry.name, Tensor::from_vec(entry.shape, data)));
            at += 4 * n;
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes after tensors"));
        }
        Ok(Self { step: header.step, fingerprint: header.fingerprint, config: header.config, counters: header.counters, tensors })
    }

    /// Writes through a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
