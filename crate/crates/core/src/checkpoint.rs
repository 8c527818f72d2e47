//! Single-file checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, `u64` header
//! length, a JSON header, then every tensor as little-endian `f64` in header
//! order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSet, GROUPS};
use crate::optim::OptimizerState;
use crate::trainer::{EpochRecord, RunConfig};

const MAGIC: &[u8; 8] = b"LTRJCKPT";
const VERSION: u32 = 1;

type HostTensor = (String, Vec<usize>, Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub best_val_fde: Option<f64>,
    /// Parameter tensors per group, in [`GROUPS`] order.
    pub params: Vec<(String, Vec<HostTensor>)>,
    pub optimizer: OptimizerState,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    section: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    best_val_fde: Option<f64>,
    optimizer_step: u64,
    tensors: Vec<TensorEntry>,
}

const OPTIMIZER_SECTION: &str = "optimizer";

impl Checkpoint {
    pub fn capture(
        config: &RunConfig,
        models: &ModelSet,
        optimizer: OptimizerState,
        epoch: usize,
        history: &[EpochRecord],
        best_val_fde: Option<f64>,
    ) -> Result<Self> {
        let params = models
            .groups()
            .into_iter()
            .map(|(g, store)| Ok((g.to_string(), store.to_host()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            epoch,
            history: history.to_vec(),
            best_val_fde,
            params,
            optimizer,
        })
    }

    /// Writes parameters into freshly built networks.
    pub fn restore_models(&self, models: &ModelSet) -> Result<()> {
        for (g, tensors) in &self.params {
            models
                .group(g)?
                .load_host(tensors)
                .map_err(|e| Error::Checkpoint(format!("group {g}: {e}")))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut blob: Vec<u8> = Vec::new();
        let sections = self
            .params
            .iter()
            .map(|(g, t)| (g.as_str(), t))
            .chain(std::iter::once((
                OPTIMIZER_SECTION,
                &self.optimizer.tensors,
            )));
        for (section, tensors) in sections {
            for (name, shape, data) in tensors {
                if shape.iter().product::<usize>() != data.len() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {section}/{name} does not match its shape"
                    )));
                }
                entries.push(TensorEntry {
                    section: section.to_string(),
                    name: name.clone(),
                    shape: shape.clone(),
                });
                for v in data {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            best_val_fde: self.best_val_fde,
            optimizer_step: self.optimizer.step,
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(20..20 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut blob = &bytes[20 + hlen..];
        let mut params: Vec<(String, Vec<HostTensor>)> =
            GROUPS.iter().map(|g| (g.to_string(), Vec::new())).collect();
        let mut opt = Vec::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            if blob.len() < n * 8 {
                return Err(bad("truncated tensor data"));
            }
            let data: Vec<f64> = blob[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blob = &blob[n * 8..];
            let t = (e.name, e.shape, data);
            if e.section == OPTIMIZER_SECTION {
                opt.push(t);
            } else {
                let slot = params
                    .iter_mut()
                    .find(|(g, _)| *g == e.section)
                    .ok_or_else(|| Error::Checkpoint(format!("unknown section `{}`", e.section)))?;
                slot.1.push(t);
            }
        }
        if !blob.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            history: header.history,
            best_val_fde: header.best_val_fde,
            params,
            optimizer: OptimizerState {
                step: header.optimizer_step,
                tensors: opt,
            },
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
