//! Binary checkpoint container.
//!
//! ```text
//! "USRC"            4 bytes magic
//! version           u32 little-endian (currently 1)
//! header_len        u64 little-endian
//! header            header_len bytes of UTF-8 JSON
//! payload           f64 little-endian values, tensors in header order
//! ```
//!
//! The JSON header carries the network configuration, epoch, learning rate,
//! Adam step count and a `tensors` table of `{name, shape, offset}` where
//! `offset` counts `f64` elements from the start of the payload. Parameter
//! tensors are named `param:<name>`; Adam moments `adam.m:<name>` and
//! `adam.v:<name>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, NetConfig, ParamSet};
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::train::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"USRC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net_config: NetConfig,
    pub params: ParamSet,
    pub adam: Option<AdamState>,
    /// Completed epochs.
    pub epoch: u64,
    /// Learning rate of the last completed epoch.
    pub lr: f64,
    pub best_val_psnr: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    net_config: NetConfig,
    epoch: u64,
    lr: f64,
    adam_step: Option<u64>,
    best_val_psnr: Option<f64>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Corrupt {
        what: "checkpoint".into(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model, adam: Option<AdamState>, epoch: u64, lr: f64) -> Self {
        Checkpoint {
            net_config: model.config.clone(),
            params: model.params.clone(),
            adam,
            epoch,
            lr,
            best_val_psnr: None,
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.net_config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut payload: Vec<&[f64]> = Vec::new();
        let mut offset = 0;
        for (name, t) in self.params.iter() {
            entries.push(TensorEntry {
                name: format!("param:{name}"),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
            payload.push(t.data());
        }
        if let Some(adam) = &self.adam {
            if !adam.matches(&self.params) {
                return Err(Error::Contract(
                    "adam state does not match parameters".into(),
                ));
            }
            for (kind, moments) in [("m", &adam.m), ("v", &adam.v)] {
                for ((name, t), mv) in self.params.iter().zip(moments) {
                    entries.push(TensorEntry {
                        name: format!("adam.{kind}:{name}"),
                        shape: t.shape().to_vec(),
                        offset,
                    });
                    offset += mv.len();
                    payload.push(mv);
                }
            }
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            net_config: self.net_config.clone(),
            epoch: self.epoch,
            lr: self.lr,
            adam_step: self.adam.as_ref().map(|a| a.t),
            best_val_psnr: self.best_val_psnr.filter(|v| v.is_finite()),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for chunk in payload {
            for v in chunk {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(corrupt(format!(
                "file is {} bytes, too short for a header",
                bytes.len()
            )));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let hend = 16usize
            .checked_add(usize::try_from(hlen).map_err(|_| corrupt("header length overflow"))?)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..hend])
            .map_err(|e| corrupt(format!("header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(corrupt(format!(
                "header version {} disagrees with container",
                header.format_version
            )));
        }
        let payload = &bytes[hend..];
        if !payload.len().is_multiple_of(8) {
            return Err(corrupt("payload is not a whole number of f64 values"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut expected_offset = 0;
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for e in header.tensors {
            if e.offset != expected_offset {
                return Err(corrupt(format!(
                    "tensor {} at offset {}, expected {expected_offset}",
                    e.name, e.offset
                )));
            }
            let n: usize = e.shape.iter().product();
            let end = e.offset + n;
            if end > values.len() {
                return Err(corrupt(format!(
                    "truncated payload: {} needs {end} values, found {}",
                    e.name,
                    values.len()
                )));
            }
            expected_offset = end;
            let data = values[e.offset..end].to_vec();
            if let Some(name) = e.name.strip_prefix("param:") {
                params.push((name.to_string(), Tensor::new(&e.shape, data)?));
            } else if e.name.starts_with("adam.m:") {
                m.push(data);
            } else if e.name.starts_with("adam.v:") {
                v.push(data);
            } else {
                return Err(corrupt(format!("unknown tensor {}", e.name)));
            }
        }
        if expected_offset != values.len() {
            return Err(corrupt(format!(
                "{} trailing values after the last tensor",
                values.len() - expected_offset
            )));
        }
        let params = ParamSet::from_entries(params)?;
        let adam = match header.adam_step {
            Some(t) => {
                let state = AdamState { m, v, t };
                if !state.matches(&params) {
                    return Err(corrupt("adam moments do not match parameters"));
                }
                Some(state)
            }
            None if m.is_empty() && v.is_empty() => None,
            None => return Err(corrupt("adam moments present without a step count")),
        };
        Ok(Checkpoint {
            net_config: header.net_config,
            params,
            adam,
            epoch: header.epoch,
            lr: header.lr,
            best_val_psnr: header.best_val_psnr,
        })
    }

    /// Writes atomically via a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
