//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "GSSLCKPT"
//! version    u32
//! header_len u64
//! header     header_len bytes of JSON (specs, iteration, source dataset,
//!            tensor names and shapes)
//! blob       f64 values of every parameter, then every buffer, in header order
//! hash       32 bytes  SHA-256 of everything above
//! ```
//!
//! Values are stored as raw IEEE-754 bit patterns, so save → load → save is
//! byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{EncoderSpec, PredictorSpec, SimSiam};
use crate::nn::{Buffer, Module, Param, TensorMeta};

pub const MAGIC: &[u8; 8] = b"GSSLCKPT";
pub const FORMAT_VERSION: u32 = 1;
const HASH_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub encoder: EncoderSpec,
    pub predictor: PredictorSpec,
    pub iteration: u64,
    pub source_dataset: String,
    pub params: Vec<TensorMeta>,
    pub buffers: Vec<TensorMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<Vec<f64>>,
    pub buffers: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_model(model: &SimSiam, iteration: u64, source_dataset: &str) -> Self {
        let params = model.params();
        let buffers = model.buffers();
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                encoder: model.encoder.spec.clone(),
                predictor: model.predictor.spec.clone(),
                iteration,
                source_dataset: source_dataset.to_string(),
                params: params.iter().map(|p| p.shape_meta()).collect(),
                buffers: buffers.iter().map(|b| b.shape_meta()).collect(),
            },
            params: params.iter().map(|p| p.value.clone()).collect(),
            buffers: buffers.iter().map(|b| b.value.clone()).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let values: usize = self.params.iter().chain(&self.buffers).map(Vec::len).sum();
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + values * 8 + HASH_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.header.format_version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.iter().chain(&self.buffers).flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 + 4 + 8 + HASH_LEN || &bytes[..8] != MAGIC {
            return Err(bad("not a geossl checkpoint"));
        }
        let (body, stored_hash) = bytes.split_at(bytes.len() - HASH_LEN);
        if Sha256::digest(body).as_slice() != stored_hash {
            return Err(bad("content hash mismatch (file corrupted)"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&body[20..header_end])?;
        if header.format_version != version {
            return Err(bad("header version disagrees with container version"));
        }
        let mut blob = body[header_end..].chunks_exact(8);
        if !blob.remainder().is_empty() {
            return Err(bad("value blob is not a whole number of f64s"));
        }
        let mut take = |meta: &TensorMeta| -> Result<Vec<f64>> {
            let n: usize = meta.shape.iter().product();
            let vals: Vec<f64> = blob
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if vals.len() != n {
                return Err(Error::Checkpoint(format!("truncated values for `{}`", meta.name)));
            }
            Ok(vals)
        };
        let params = header.params.iter().map(&mut take).collect::<Result<Vec<_>>>()?;
        let buffers = header.buffers.iter().map(&mut take).collect::<Result<Vec<_>>>()?;
        if blob.next().is_some() {
            return Err(bad("trailing values after the last tensor"));
        }
        Ok(Checkpoint {
            header,
            params,
            buffers,
        })
    }

    /// Hex SHA-256 of the serialized container.
    pub fn content_hash(&self) -> String {
        let bytes = self.to_bytes();
        hex::encode(&bytes[bytes.len() - HASH_LEN..])
    }

    /// Writes the container and returns its content hash.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(hex::encode(&bytes[bytes.len() - HASH_LEN..]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Rebuilds the full model.
    pub fn to_model(&self) -> Result<SimSiam> {
        let mut model = SimSiam::new(self.header.encoder.clone(), self.header.predictor.clone(), 0)?;
        copy_tensors(&mut model.params_mut(), &self.header.params, &self.params, |_| true)?;
        copy_tensors(&mut model.buffers_mut(), &self.header.buffers, &self.buffers, |_| true)?;
        Ok(model)
    }

    /// Copies every `backbone.*` tensor into the matching tensors of
    /// `module`. Names and shapes must agree one to one; the first
    /// disagreement is reported.
    pub fn load_backbone_into<M: Module + ?Sized>(&self, module: &mut M) -> Result<()> {
        let is_backbone = |name: &str| name.starts_with("backbone.");
        let mut params: Vec<&mut Param> = module.params_mut().into_iter().filter(|p| is_backbone(&p.name)).collect();
        copy_tensors(&mut params, &self.header.params, &self.params, is_backbone)?;
        let mut buffers: Vec<&mut Buffer> =
            module.buffers_mut().into_iter().filter(|b| is_backbone(&b.name)).collect();
        copy_tensors(&mut buffers, &self.header.buffers, &self.buffers, is_backbone)
    }
}

trait Stored {
    fn name(&self) -> &str;
    fn shape(&self) -> &[usize];
    fn values_mut(&mut self) -> &mut [f64];
}

impl Stored for Param {
    fn name(&self) -> &str {
        &self.name
    }
    fn shape(&self) -> &[usize] {
        &self.shape
    }
    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.value
    }
}

impl Stored for Buffer {
    fn name(&self) -> &str {
        &self.name
    }
    fn shape(&self) -> &[usize] {
        &self.shape
    }
    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.value
    }
}

fn copy_tensors<T: Stored>(
    targets: &mut [&mut T],
    metas: &[TensorMeta],
    values: &[Vec<f64>],
    select: impl Fn(&str) -> bool,
) -> Result<()> {
    let stored: Vec<(&TensorMeta, &Vec<f64>)> = metas.iter().zip(values).filter(|(m, _)| select(&m.name)).collect();
    for (i, t) in targets.iter().enumerate() {
        match stored.get(i) {
            None => {
                return Err(Error::Topology {
                    layer: t.name().to_string(),
                    detail: "missing from checkpoint".into(),
                })
            }
            Some((meta, _)) if meta.name != t.name() || meta.shape != t.shape() => {
                return Err(Error::Topology {
                    layer: t.name().to_string(),
                    detail: format!(
                        "checkpoint has `{}` with shape {:?}, model expects {:?}",
                        meta.name,
                        meta.shape,
                        t.shape()
                    ),
                })
            }
            _ => {}
        }
    }
    if let Some((extra, _)) = stored.get(targets.len()) {
        return Err(Error::Topology {
            layer: extra.name.clone(),
            detail: "present in checkpoint but not in model".into(),
        });
    }
    for (t, (_, v)) in targets.iter_mut().zip(stored) {
        t.values_mut().copy_from_slice(v);
    }
    Ok(())
}
