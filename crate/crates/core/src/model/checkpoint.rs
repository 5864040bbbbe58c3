//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `SQEDCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header, then every
//! tensor as little-endian `f64` in header order (parameters first, then
//! optimizer state).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FaithModel, ModelConfig, ParamGroup};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SQEDCKPT";

/// Trainer state carried alongside the weights for exact resumption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    /// Trainer configuration, stored verbatim.
    pub train_config: serde_json::Value,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Seed from which every per-epoch shuffle is derived.
    pub rng_seed: u64,
    pub optimizer_step: u64,
    pub best_val_full_acc: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Optimizer moment tensors, stored in the payload.
    #[serde(skip)]
    pub optimizer_tensors: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct CheckpointFile {
    pub model: FaithModel,
    pub training: Option<TrainingState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    group: Option<ParamGroup>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_config: ModelConfig,
    params: Vec<TensorEntry>,
    training: Option<TrainingState>,
    optimizer_tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(path: &Path, ckpt: &CheckpointFile) -> Result<()> {
    let params = ckpt.model.params();
    let opt = ckpt
        .training
        .as_ref()
        .map(|t| t.optimizer_tensors.as_slice())
        .unwrap_or(&[]);
    let header = Header {
        format_version: FORMAT_VERSION,
        model_config: ckpt.model.config().clone(),
        params: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                group: Some(p.group),
            })
            .collect(),
        training: ckpt.training.clone(),
        optimizer_tensors: opt
            .iter()
            .enumerate()
            .map(|(i, t)| TensorEntry {
                name: format!("optimizer.{i}"),
                shape: t.shape().to_vec(),
                group: None,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut bytes = Vec::with_capacity(20 + json.len() + 8 * params.numel());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for t in params.iter().map(|p| &p.tensor).chain(opt.iter()) {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(8 * n)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(e.to_string()))?;

    let mut model = FaithModel::new(header.model_config, 0)?;
    if header.params.len() != model.params().len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, architecture expects {}",
            header.params.len(),
            model.params().len()
        )));
    }
    let mut tensors = Vec::with_capacity(header.params.len());
    for (entry, expected) in header.params.iter().zip(model.params().iter()) {
        if entry.name != expected.name {
            return Err(Error::Format(format!(
                "parameter {} found where {} was expected",
                entry.name, expected.name
            )));
        }
        tensors.push(r.tensor(&entry.shape)?);
    }
    model.params_mut().set_tensors(tensors)?;

    let mut training = header.training;
    let mut opt = Vec::with_capacity(header.optimizer_tensors.len());
    for entry in &header.optimizer_tensors {
        opt.push(r.tensor(&entry.shape)?);
    }
    if let Some(t) = training.as_mut() {
        t.optimizer_tensors = opt;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    Ok(CheckpointFile { model, training })
}
