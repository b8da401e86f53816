//! Checkpoint serialization: every parameter tensor plus the model
//! config and its hash, in either a JSON or a binary container. Both
//! formats round-trip bit-exactly.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{ModelConfig, SegmentationModel};
use super::NnError;

const BINARY_MAGIC: &[u8; 4] = b"AMCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointFormat {
    Json,
    Binary,
}

impl CheckpointFormat {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "json" => Some(Self::Json),
            "binary" | "bin" => Some(Self::Binary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorDump {
    rows: usize,
    cols: usize,
    /// f64 bit patterns, so JSON round-trips exactly.
    bits: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub config_hash: String,
    tensors: Vec<TensorDump>,
}

pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    format!("{digest:x}")
}

impl Checkpoint {
    pub fn from_model(model: &SegmentationModel) -> Self {
        let mut tensors = Vec::new();
        model.visit_params(&mut |m| {
            tensors.push(TensorDump {
                rows: m.rows,
                cols: m.cols,
                bits: m.data.iter().map(|v| v.to_bits()).collect(),
            })
        });
        Self {
            version: VERSION,
            config: model.config.clone(),
            config_hash: config_hash(&model.config),
            tensors,
        }
    }

    pub fn into_model(self) -> Result<SegmentationModel, NnError> {
        if self.version != VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.config_hash != config_hash(&self.config) {
            return Err(NnError::Checkpoint("config hash mismatch".into()));
        }
        // seed is irrelevant, every parameter is overwritten
        let mut model = SegmentationModel::new(self.config.clone(), &mut ChaCha8Rng::seed_from_u64(0));
        let mut idx = 0;
        let mut err = None;
        model.visit_params_mut(&mut |m| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(idx) {
                Some(t) if t.rows == m.rows && t.cols == m.cols => {
                    m.data = t.bits.iter().map(|&b| f64::from_bits(b)).collect();
                }
                Some(t) => {
                    err = Some(format!(
                        "tensor {idx} shape {}x{} does not match model {}x{}",
                        t.rows, t.cols, m.rows, m.cols
                    ));
                }
                None => err = Some(format!("checkpoint is missing tensor {idx}")),
            }
            idx += 1;
        });
        if idx != self.tensors.len() {
            err = Some(format!(
                "checkpoint has {} tensors, model expects {idx}",
                self.tensors.len()
            ));
        }
        match err {
            Some(e) => Err(NnError::Checkpoint(e)),
            None => Ok(model),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: CheckpointFormat) -> Result<(), NnError> {
        let path = path.as_ref();
        let bytes = match format {
            CheckpointFormat::Json => serde_json::to_vec_pretty(self)
                .map_err(|e| NnError::Checkpoint(e.to_string()))?,
            CheckpointFormat::Binary => self.to_binary(),
        };
        let tmp = path.with_extension("tmp");
        let io_err = |e: std::io::Error| NnError::Checkpoint(format!("{}: {e}", path.display()));
        fs::write(&tmp, bytes).map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let path = path.as_ref();
        let bytes = fs::read(path)
            .map_err(|e| NnError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::from_binary(&bytes)
        } else {
            serde_json::from_slice(&bytes).map_err(|e| NnError::Checkpoint(e.to_string()))
        }
    }

    fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BINARY_MAGIC);
        out.write_u32::<LittleEndian>(self.version).unwrap();
        let config_json = serde_json::to_vec(&self.config).unwrap();
        out.write_u32::<LittleEndian>(config_json.len() as u32).unwrap();
        out.write_all(&config_json).unwrap();
        out.write_u32::<LittleEndian>(self.config_hash.len() as u32).unwrap();
        out.write_all(self.config_hash.as_bytes()).unwrap();
        out.write_u32::<LittleEndian>(self.tensors.len() as u32).unwrap();
        for t in &self.tensors {
            out.write_u64::<LittleEndian>(t.rows as u64).unwrap();
            out.write_u64::<LittleEndian>(t.cols as u64).unwrap();
            for &b in &t.bits {
                out.write_u64::<LittleEndian>(b).unwrap();
            }
        }
        out
    }

    fn from_binary(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        let mut cur = Cursor::new(&bytes[BINARY_MAGIC.len()..]);
        let version = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| bad("truncated header"))?;
        let config_len = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| bad("truncated header"))? as usize;
        let mut config_json = vec![0u8; config_len];
        cur.read_exact(&mut config_json)
            .map_err(|_| bad("truncated config"))?;
        let config: ModelConfig =
            serde_json::from_slice(&config_json).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let hash_len = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| bad("truncated hash"))? as usize;
        let mut hash = vec![0u8; hash_len];
        cur.read_exact(&mut hash).map_err(|_| bad("truncated hash"))?;
        let config_hash =
            String::from_utf8(hash).map_err(|_| bad("config hash is not utf-8"))?;
        let count = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| bad("truncated tensor count"))? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = cur
                .read_u64::<LittleEndian>()
                .map_err(|_| bad("truncated tensor"))? as usize;
            let cols = cur
                .read_u64::<LittleEndian>()
                .map_err(|_| bad("truncated tensor"))? as usize;
            let mut bits = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                bits.push(
                    cur.read_u64::<LittleEndian>()
                        .map_err(|_| bad("truncated tensor data"))?,
                );
            }
            tensors.push(TensorDump { rows, cols, bits });
        }
        Ok(Self {
            version,
            config,
            config_hash,
            tensors,
        })
    }

    /// Hex digest of the serialized tensors; equal checkpoints hash
    /// equal regardless of on-disk format.
    pub fn params_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tensors {
            hasher.update(t.rows.to_le_bytes());
            hasher.update(t.cols.to_le_bytes());
            for &b in &t.bits {
                hasher.update(b.to_le_bytes());
            }
        }
        format!("{:x}", hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_model() -> SegmentationModel {
        SegmentationModel::new(ModelConfig::small(), &mut ChaCha8Rng::seed_from_u64(9))
    }

    fn dump(model: &SegmentationModel) -> Vec<u64> {
        let mut out = Vec::new();
        model.visit_params(&mut |m| out.extend(m.data.iter().map(|v| v.to_bits())));
        out
    }

    #[test]
    fn json_round_trip_is_exact() {
        let model = small_model();
        let dir = tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::from_model(&model).save(&path, CheckpointFormat::Json).unwrap();
        let reloaded = Checkpoint::load(&path).unwrap().into_model().unwrap();
        assert_eq!(dump(&model), dump(&reloaded));
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let model = small_model();
        let dir = tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        Checkpoint::from_model(&model).save(&path, CheckpointFormat::Binary).unwrap();
        let reloaded = Checkpoint::load(&path).unwrap().into_model().unwrap();
        assert_eq!(dump(&model), dump(&reloaded));
    }

    #[test]
    fn params_hash_is_format_independent() {
        let model = small_model();
        let dir = tempdir().unwrap();
        let pj = dir.path().join("a.json");
        let pb = dir.path().join("a.bin");
        let ck = Checkpoint::from_model(&model);
        ck.save(&pj, CheckpointFormat::Json).unwrap();
        ck.save(&pb, CheckpointFormat::Binary).unwrap();
        assert_eq!(
            Checkpoint::load(&pj).unwrap().params_hash(),
            Checkpoint::load(&pb).unwrap().params_hash()
        );
    }
}
