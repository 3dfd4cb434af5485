//! On-disk model checkpoints.
//!
//! A checkpoint is a directory holding `manifest.toml` (format tag, version,
//! encoder config, and per tensor its name, shape, byte offset, byte length
//! and SHA-256) next to `weights.bin`, every tensor's values as
//! little-endian `f64` back to back. A tokenizer vocabulary may ride along
//! as `vocab.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use longembed_autodiff::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::tokenizer::Tokenizer;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::Params;

pub const FORMAT: &str = "longembed-checkpoint";
pub const VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const BLOB_FILE: &str = "weights.bin";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    blob: String,
    blob_bytes: u64,
    config: EncoderConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
    sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn corrupt(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Writes `encoder` (and optionally its tokenizer) into directory `dir`.
pub fn save_checkpoint(dir: &Path, encoder: &Encoder, tokenizer: Option<&Tokenizer>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(encoder.weights.num_scalars() * 8);
    let mut tensors = Vec::with_capacity(encoder.weights.len());
    for (name, t) in encoder.weights.iter() {
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let bytes = &blob[offset..];
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: offset as u64,
            bytes: bytes.len() as u64,
            sha256: hex(&Sha256::digest(bytes)),
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        blob: BLOB_FILE.into(),
        blob_bytes: blob.len() as u64,
        config: encoder.config.clone(),
        tensors,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| corrupt(dir, format!("cannot serialize manifest: {e}")))?;
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    if let Some(tok) = tokenizer {
        tok.save(&dir.join(VOCAB_FILE))?;
    }
    Ok(())
}

/// Reads a checkpoint, verifying every length and digest before building
/// the encoder. Nothing partial is ever returned.
pub fn load_checkpoint(dir: &Path) -> Result<Encoder> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| corrupt(&manifest_path, format!("unreadable manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(corrupt(
            &manifest_path,
            format!("format tag {:?}, expected {FORMAT:?}", manifest.format),
        ));
    }
    if manifest.version != VERSION {
        return Err(corrupt(
            &manifest_path,
            format!(
                "version {} is not supported (expected {VERSION})",
                manifest.version
            ),
        ));
    }
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() as u64 != manifest.blob_bytes {
        return Err(corrupt(
            &blob_path,
            format!(
                "blob holds {} bytes, manifest records {}",
                blob.len(),
                manifest.blob_bytes
            ),
        ));
    }

    let mut weights = Params::new();
    for entry in &manifest.tensors {
        let count: usize = entry.shape.iter().product();
        if entry.shape.is_empty() || count == 0 || (count * 8) as u64 != entry.bytes {
            return Err(Error::WeightShape {
                name: entry.name.clone(),
                detail: format!(
                    "shape {:?} does not match {} recorded bytes",
                    entry.shape, entry.bytes
                ),
            });
        }
        let end = entry
            .offset
            .checked_add(entry.bytes)
            .filter(|&e| e <= blob.len() as u64)
            .ok_or_else(|| {
                corrupt(
                    &blob_path,
                    format!("tensor {} lies outside the blob", entry.name),
                )
            })?;
        let bytes = &blob[entry.offset as usize..end as usize];
        if hex(&Sha256::digest(bytes)) != entry.sha256 {
            return Err(corrupt(
                &blob_path,
                format!("checksum mismatch for tensor {}", entry.name),
            ));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        weights.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    if weights.len() != manifest.tensors.len() {
        return Err(corrupt(&manifest_path, "duplicate tensor names"));
    }
    Encoder::from_weights(manifest.config, weights)
}

/// The tokenizer stored next to a checkpoint, if any.
pub fn load_checkpoint_tokenizer(dir: &Path) -> Result<Option<Tokenizer>> {
    let path: PathBuf = dir.join(VOCAB_FILE);
    if !path.exists() {
        return Ok(None);
    }
    Tokenizer::load(&path).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Pooling;

    fn tiny() -> Encoder {
        let cfg = EncoderConfig {
            num_layers: 1,
            hidden_dim: 8,
            num_heads: 2,
            ffn_dim: 12,
            vocab_size: 64,
            trained_context: 16,
            rope_base: 1000.0,
            dropout: 0.0,
            pooling: Pooling::Mean,
            tie_mlm_head: false,
        };
        Encoder::new(cfg, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let enc = tiny();
        save_checkpoint(dir.path(), &enc, None).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.config, enc.config);
        for (name, t) in enc.weights.iter() {
            let u = back.weights.get(name).unwrap();
            assert_eq!(t.shape(), u.shape());
            assert!(t
                .data()
                .iter()
                .zip(u.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert!(load_checkpoint_tokenizer(dir.path()).unwrap().is_none());
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &tiny(), None).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p)
            .unwrap()
            .replace("version = 1", "version = 2");
        fs::write(&p, text).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { ref detail, .. } if detail.contains("version")));
    }
}
