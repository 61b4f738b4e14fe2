//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version, `u32` header length, JSON header,
//! little-endian `f32` blobs (parameters in inventory order, then optional
//! optimizer moments), trailing CRC32 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEMAMBA1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub step: u64,
    pub seed: u64,
}

/// Adam moments, flattened in parameter inventory order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet<f32>,
    pub meta: TrainMeta,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the blob section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    step: u64,
    m_offset: usize,
    v_offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: ModelConfig,
    params: Vec<BlobEntry>,
    meta: TrainMeta,
    optimizer: Option<OptimizerEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CheckpointCorrupt(msg.into())
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for (name, t) in self.params.iter() {
            entries.push(BlobEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let optimizer = match &self.optimizer {
            Some(o) => {
                if o.m.len() != offset || o.v.len() != offset {
                    return Err(Error::InvalidArgument("optimizer moments do not match parameter count".into()));
                }
                Some(OptimizerEntry {
                    step: o.step,
                    m_offset: offset,
                    v_offset: 2 * offset,
                    len: offset,
                })
            }
            None => None,
        };
        let header = Header {
            kind: self.kind(),
            config: self.config.clone(),
            params: entries,
            meta: self.meta,
            optimizer,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 12 * offset + 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut push = |vals: &[f32]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, t) in self.params.iter() {
            push(t.data());
        }
        if let Some(o) = &self.optimizer {
            push(&o.m);
            push(&o.v);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parses a checkpoint. With `expected` set, a different model kind is
    /// an error. The parameter table must match the config's inventory.
    pub fn from_bytes(bytes: &[u8], expected: Option<ModelKind>) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointVersion("missing SEMAMBA1 magic".into()));
        }
        if bytes.len() < 20 {
            return Err(corrupt("truncated header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(format!(
                "file version {version}, supported {CHECKPOINT_VERSION}"
            )));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch (truncated or damaged file)"));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header extends past end of file"))?;
        let header: Header = serde_json::from_slice(&body[16..header_end]).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.kind != header.config.kind() {
            return Err(corrupt("header kind disagrees with config"));
        }
        if let Some(want) = expected {
            if want != header.kind {
                return Err(Error::CheckpointKind {
                    expected: want.to_string(),
                    found: header.kind.to_string(),
                });
            }
        }

        let blob = &body[header_end..];
        if blob.len() % 4 != 0 {
            return Err(corrupt("blob section is not a whole number of f32 values"));
        }
        let values: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let reference = header.config.init_params::<f32>(0)?;
        let mut want_names: Vec<(&str, &[usize])> = reference.iter().map(|(n, t)| (n, t.shape())).collect();
        let mut have_names: Vec<(&str, &[usize])> =
            header.params.iter().map(|e| (e.name.as_str(), e.shape.as_slice())).collect();
        if want_names != have_names {
            want_names.sort();
            have_names.sort();
            let missing: Vec<_> = want_names.iter().filter(|n| !have_names.contains(n)).map(|n| n.0).collect();
            let extra: Vec<_> = have_names.iter().filter(|n| !want_names.contains(n)).map(|n| n.0).collect();
            return Err(Error::CheckpointInventory(format!(
                "missing {missing:?}, unexpected {extra:?}"
            )));
        }

        let mut params = ParamSet::new();
        let mut used = 0;
        for e in &header.params {
            let n: usize = e.shape.iter().product();
            let data = values
                .get(e.offset..e.offset + n)
                .ok_or_else(|| corrupt(format!("blob for {} out of range", e.name)))?;
            params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data.to_vec())?);
            used = used.max(e.offset + n);
        }
        let optimizer = match header.optimizer {
            Some(o) => {
                let take = |off: usize| {
                    values
                        .get(off..off + o.len)
                        .map(<[f32]>::to_vec)
                        .ok_or_else(|| corrupt("optimizer blob out of range"))
                };
                used = used.max(o.v_offset + o.len).max(o.m_offset + o.len);
                Some(OptimizerState {
                    step: o.step,
                    m: take(o.m_offset)?,
                    v: take(o.v_offset)?,
                })
            }
            None => None,
        };
        if used != values.len() {
            return Err(corrupt(format!("{} trailing values", values.len() - used)));
        }
        Ok(Self {
            config: header.config,
            params,
            meta: header.meta,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected: Option<ModelKind>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected)
    }
}
