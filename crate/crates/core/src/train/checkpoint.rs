//! Checkpoint file layout:
//!
//! ```text
//! "QDF1" | header_len: u32 LE | JSON header | payload (LE floats)
//! ```
//!
//! The header lists every tensor with its byte range in the payload and
//! carries a CRC32 of the whole payload.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Params};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"QDF1";

/// Position of the shuffle generator when the checkpoint was taken.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position; a string because it is 128-bit.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Config(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to rebuild a trained model.
///
/// Parameters are held at 64-bit; a 32-bit checkpoint stores values that
/// are exactly representable in 32 bits and is written at 32 bits.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub params: Params<f64>,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn model<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.model.clone(),
            params: self.params.cast(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.train.dtype
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
    #[serde(default)]
    buffer: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    tensors: Vec<TensorEntry>,
    crc32: u32,
    rng: RngState,
}

fn encode_payload(ck: &Checkpoint) -> (Vec<u8>, Vec<TensorEntry>) {
    let dtype = ck.dtype();
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in ck.params.iter() {
        let offset = payload.len() as u64;
        for &v in t.data() {
            match dtype {
                DType::F64 => v.write_le(&mut payload),
                DType::F32 => (v as f32).write_le(&mut payload),
            }
        }
        entries.push(TensorEntry {
            name: name.clone(),
            dtype,
            shape: t.shape().to_vec(),
            offset,
            length: payload.len() as u64 - offset,
            buffer: ck.params.is_buffer(name),
        });
    }
    (payload, entries)
}

/// Serializes a checkpoint; identical checkpoints give identical bytes.
pub fn checkpoint_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let (payload, tensors) = encode_payload(ck);
    let header = Header {
        version: CHECKPOINT_VERSION,
        model_config: ck.model.clone(),
        train_config: ck.train.clone(),
        epoch: ck.epoch,
        tensors,
        crc32: crc32fast::hash(&payload),
        rng: ck.rng.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len())
        .map_err(|_| Error::Config("checkpoint header exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    parse_checkpoint(&std::fs::read(path)?)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let fail = |offset: usize, detail: String| Error::Format {
        offset: offset as u64,
        detail,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(fail(0, "missing QDF1 magic".into()));
    }
    let len_bytes: [u8; 4] = bytes
        .get(4..8)
        .ok_or_else(|| fail(4, "truncated header length".into()))?
        .try_into()
        .expect("4 bytes");
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fail(bytes.len(), format!("header of {header_len} bytes is truncated")))?;

    // Peek at the version before committing to the full schema.
    let raw: serde_json::Value = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| fail(8 + e.column().saturating_sub(1), format!("bad header JSON: {e}")))?;
    let found = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| fail(8, "header has no version".into()))?;
    if found != CHECKPOINT_VERSION as u64 {
        return Err(Error::Version {
            found: found.min(u32::MAX as u64) as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(raw).map_err(|e| fail(8, format!("bad header: {e}")))?;

    let payload = &bytes[header_end..];
    let expected_len: u64 = header.tensors.iter().map(|t| t.length).sum();
    if payload.len() as u64 != expected_len {
        return Err(fail(
            header_end + payload.len().min(expected_len as usize),
            format!("payload has {} bytes, directory expects {expected_len}", payload.len()),
        ));
    }
    if crc32fast::hash(payload) != header.crc32 {
        return Err(fail(header_end, "payload checksum mismatch".into()));
    }

    let mut tensors = BTreeMap::new();
    let mut buffers = Vec::new();
    for e in &header.tensors {
        let start = usize::try_from(e.offset).ok();
        let end = start.and_then(|s| s.checked_add(e.length as usize));
        let n: usize = e.shape.iter().product();
        let (start, end) = match (start, end) {
            (Some(s), Some(t)) if t <= payload.len() && (t - s) == n * e.dtype.size_of() => (s, t),
            _ => {
                return Err(fail(
                    header_end,
                    format!("tensor `{}` has an invalid byte range", e.name),
                ))
            }
        };
        let chunk = &payload[start..end];
        let data: Vec<f64> = match e.dtype {
            DType::F64 => chunk.chunks_exact(8).map(f64::read_le).collect(),
            DType::F32 => chunk.chunks_exact(4).map(|b| f32::read_le(b) as f64).collect(),
        };
        tensors.insert(e.name.clone(), Tensor::from_vec(e.shape.clone(), data)?);
        if e.buffer {
            buffers.push(e.name.clone());
        }
    }
    Ok(Checkpoint {
        model: header.model_config,
        train: header.train_config,
        epoch: header.epoch,
        params: Params::from_parts(tensors, &buffers),
        rng: header.rng,
    })
}
