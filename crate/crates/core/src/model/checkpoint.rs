//! Binary checkpoint format.
//!
//! Layout: magic "V2C1", a length-prefixed UTF-8 JSON blob (format version,
//! model config, vocabulary, action names, epoch counter, shuffle rng
//! state), then one record per parameter tensor and finally the optimizer
//! records, all in the same encoding: length-prefixed UTF-8 name, u32 LE
//! rank, dims as u32 LE, values as f64 LE. Round trips are byte-exact.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Trainer, V2cModel};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"V2C1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    actions: Vec<String>,
    epoch: usize,
    shuffle_rng_state: u64,
}

pub(crate) fn write_record(out: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
    for &dim in tensor.shape() {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in tensor.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize the trainer (parameters, optimizer, progress) to bytes.
pub fn encode_checkpoint(trainer: &Trainer) -> Vec<u8> {
    let model = &trainer.model;
    let meta = Meta {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        vocab: model.vocab.words().to_vec(),
        actions: model.actions.clone(),
        epoch: trainer.epoch,
        shuffle_rng_state: trainer.shuffle_rng.state(),
    };
    let blob = serde_json::to_vec(&meta).expect("meta serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(&blob);
    for param in model.params.iter() {
        write_record(&mut out, &param.name, &param.value);
    }
    for (param, state) in model.params.iter().zip(&trainer.optimizer.states) {
        write_record(
            &mut out,
            &format!("optim.m.{}", param.name),
            &state.first_moment,
        );
        write_record(
            &mut out,
            &format!("optim.v.{}", param.name),
            &state.second_moment,
        );
        write_record(
            &mut out,
            &format!("optim.t.{}", param.name),
            &Tensor::scalar(state.step_count as f64),
        );
    }
    out
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(trainer);
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.clone(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read_record(cursor: &mut Cursor) -> Result<(String, Tensor)> {
    let name_len = cursor.u32()? as usize;
    let name = String::from_utf8(cursor.take(name_len)?.to_vec()).map_err(|_| Error::Format {
        path: cursor.path.clone(),
        msg: "tensor name is not UTF-8".into(),
    })?;
    let rank = cursor.u32()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(cursor.u32()? as usize);
    }
    let count: usize = shape.iter().product();
    let bytes = cursor.take(count * 8)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect();
    Ok((name, Tensor::new(shape, values)?))
}

/// Rebuild a trainer from checkpoint bytes: the model structure is rebuilt
/// from the stored config, then every tensor is overwritten from its record.
pub fn decode_checkpoint(bytes: &[u8], path: &str) -> Result<Trainer> {
    let mut cursor = Cursor {
        bytes,
        pos: 0,
        path: path.to_string(),
    };
    let magic = cursor.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_string(),
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).to_string(),
        });
    }
    let blob_len = cursor.u32()? as usize;
    let blob = cursor.take(blob_len)?;
    let meta: Meta = serde_json::from_slice(blob).map_err(|e| Error::Format {
        path: path.to_string(),
        msg: format!("config blob: {e}"),
    })?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.to_string(),
            found: meta.version,
            supported: CHECKPOINT_VERSION,
        });
    }

    let vocab = Vocabulary::from_words(meta.vocab)?;
    let model = V2cModel::new(meta.config, vocab, meta.actions)?;
    let mut trainer = Trainer::new(model);
    trainer.epoch = meta.epoch;
    trainer.shuffle_rng = Rng::restore(meta.shuffle_rng_state);

    let mut loaded: std::collections::HashMap<String, Tensor> = std::collections::HashMap::new();
    while !cursor.done() {
        let (name, tensor) = read_record(&mut cursor)?;
        if loaded.insert(name.clone(), tensor).is_some() {
            return Err(Error::Format {
                path: path.to_string(),
                msg: format!("duplicate tensor record {name:?}"),
            });
        }
    }

    let known: std::collections::HashSet<String> = trainer
        .model
        .params
        .iter()
        .flat_map(|p| {
            [
                p.name.clone(),
                format!("optim.m.{}", p.name),
                format!("optim.v.{}", p.name),
                format!("optim.t.{}", p.name),
            ]
        })
        .collect();
    if let Some(unknown) = loaded.keys().find(|name| !known.contains(*name)) {
        return Err(Error::UnknownTensor {
            path: path.to_string(),
            name: unknown.clone(),
        });
    }

    let ids: Vec<_> = trainer.model.params.ids().collect();
    for (idx, id) in ids.into_iter().enumerate() {
        let name = trainer.model.params.get(id).name.clone();
        let mut fetch = |key: String| -> Result<Tensor> {
            loaded.remove(&key).ok_or_else(|| Error::Format {
                path: path.to_string(),
                msg: format!("missing tensor record {key:?}"),
            })
        };
        let value = fetch(name.clone())?;
        if value.shape() != trainer.model.params.value(id).shape() {
            return Err(Error::Format {
                path: path.to_string(),
                msg: format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    value.shape(),
                    trainer.model.params.value(id).shape()
                ),
            });
        }
        trainer.model.params.get_mut(id).value = value;
        let state = &mut trainer.optimizer.states[idx];
        state.first_moment = fetch(format!("optim.m.{name}"))?;
        state.second_moment = fetch(format!("optim.v.{name}"))?;
        let step = fetch(format!("optim.t.{name}"))?;
        state.step_count = step.item()? as u64;
    }
    Ok(trainer)
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}
