//! Single-file checkpoints: a magic line, a one-line JSON manifest, then the
//! raw little-endian `f64` payload of every block in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DecoderConfig, EncoderConfig, GeoRecon, ModelError, ParamSet};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "georecon-ckpt 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (missing `{CHECKPOINT_MAGIC}` header)")]
    BadMagic,
    #[error("malformed checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("unsupported payload encoding {byte_order}/{dtype}")]
    Encoding { byte_order: String, dtype: String },
    #[error("payload holds {found} bytes, manifest declares {expected}")]
    Truncated { expected: usize, found: usize },
    #[error("block {name} spans bytes {offset}..{end}, outside the payload")]
    BlockRange { name: String, offset: usize, end: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
    /// Number of `f64` values.
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    byte_order: String,
    dtype: String,
    payload_bytes: usize,
    encoder: EncoderConfig,
    decoder: DecoderConfig,
    dataset: Option<String>,
    blocks: Vec<BlockEntry>,
}

/// A model plus the dataset it was trained on.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: GeoRecon,
    pub dataset: Option<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.params();
        let mut blocks = Vec::with_capacity(params.len());
        let mut payload = Vec::with_capacity(params.num_scalars() * 8);
        for b in params.blocks() {
            blocks.push(BlockEntry {
                name: b.name.clone(),
                shape: b.value.shape().to_vec(),
                offset: payload.len(),
                len: b.value.numel(),
            });
            for x in b.value.data() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let manifest = Manifest {
            byte_order: "little".into(),
            dtype: "f64".into(),
            payload_bytes: payload.len(),
            encoder: self.model.encoder_config().clone(),
            decoder: self.model.decoder_config().clone(),
            dataset: self.dataset.clone(),
            blocks,
        };
        let mut out = format!("{CHECKPOINT_MAGIC}\n").into_bytes();
        out.extend(serde_json::to_vec(&manifest).expect("manifest serializes"));
        out.push(b'\n');
        out.extend(payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let header_end = bytes.iter().position(|&b| b == b'\n').ok_or(CheckpointError::BadMagic)?;
        if &bytes[..header_end] != CHECKPOINT_MAGIC.as_bytes() {
            return Err(CheckpointError::BadMagic);
        }
        let rest = &bytes[header_end + 1..];
        let manifest_end = rest.iter().position(|&b| b == b'\n').ok_or(CheckpointError::BadMagic)?;
        let manifest: Manifest = serde_json::from_slice(&rest[..manifest_end])?;
        if manifest.byte_order != "little" || manifest.dtype != "f64" {
            return Err(CheckpointError::Encoding { byte_order: manifest.byte_order, dtype: manifest.dtype });
        }
        let payload = &rest[manifest_end + 1..];
        if payload.len() != manifest.payload_bytes {
            return Err(CheckpointError::Truncated { expected: manifest.payload_bytes, found: payload.len() });
        }
        let mut params = ParamSet::new();
        for b in &manifest.blocks {
            let end = b.offset + 8 * b.len;
            if end > payload.len() {
                return Err(CheckpointError::BlockRange { name: b.name.clone(), offset: b.offset, end });
            }
            let data = payload[b.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if b.shape.iter().product::<usize>() != b.len {
                return Err(CheckpointError::BlockRange { name: b.name.clone(), offset: b.offset, end });
            }
            params.push(b.name.clone(), Tensor::new(b.shape.clone(), data));
        }
        let model = GeoRecon::from_params(manifest.encoder, manifest.decoder, params)?;
        Ok(Checkpoint { model, dataset: manifest.dataset })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeoRecon {
        let enc = EncoderConfig { hidden_dim: 4, num_layers: 1, num_rbf: 3, ..Default::default() };
        GeoRecon::new(enc, DecoderConfig { depth: 2, width: 5 }, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = Checkpoint { model: small(), dataset: Some("corpus.xyz".into()) };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.model.params(), ck.model.params());
        assert_eq!(back.dataset.as_deref(), Some("corpus.xyz"));
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        assert!(matches!(Checkpoint::from_bytes(b"hello\n{}\n"), Err(CheckpointError::BadMagic)));
        let mut bytes = Checkpoint { model: small(), dataset: None }.to_bytes();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Truncated { .. })));
    }
}
