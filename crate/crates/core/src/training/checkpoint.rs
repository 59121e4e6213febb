//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "FLDCKPT\0"
//! version    u32
//! header_len u64
//! header     JSON (model config, normalization, training metadata, array index)
//! payload    f64 values of every array, in index order
//! crc32      u32 over every preceding byte
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{ModelConfig, ModelKind, TrainedModel};
use super::trainer::TrainRun;
use crate::error::{FldError, Result};
use crate::numerics::DenseArray;
use crate::signal::NormalizationStats;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    norm: NormalizationStats,
    train_config: Option<TrainConfig>,
    seed: u64,
    iteration: usize,
    arrays: Vec<ArrayEntry>,
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub norm: NormalizationStats,
    pub train_config: Option<TrainConfig>,
    pub seed: u64,
    pub iteration: usize,
    pub arrays: Vec<(String, DenseArray)>,
}

impl ModelCheckpoint {
    pub fn from_model(
        model: &TrainedModel,
        train_config: Option<TrainConfig>,
        iteration: usize,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model: model.config(),
            norm: model.norm().clone(),
            seed: train_config.as_ref().map(|c| c.seed).unwrap_or(0),
            train_config,
            iteration,
            arrays: model.state_arrays(),
        }
    }

    pub fn from_run(run: &TrainRun) -> Self {
        Self::from_model(&run.model, Some(run.train_config.clone()), run.iterations)
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    /// Rebuilds the model; every array must match a slot by name and shape.
    pub fn to_model(&self) -> Result<TrainedModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = self.model.build(self.norm.clone(), &mut rng)?;
        m.load_state(self.arrays.clone())?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            norm: self.norm.clone(),
            train_config: self.train_config.clone(),
            seed: self.seed,
            iteration: self.iteration,
            arrays: self
                .arrays
                .iter()
                .map(|(n, a)| ArrayEntry {
                    name: n.clone(),
                    shape: a.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let values: usize = self.arrays.iter().map(|(_, a)| a.len()).sum();
        let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + 8 * values + 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, a) in &self.arrays {
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parses a checkpoint. Magic and version are checked before the
    /// checksum so an old or foreign file gets the more specific error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX_LEN + 4 {
            return Err(FldError::Corrupt(format!(
                "file is only {} bytes",
                bytes.len()
            )));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(FldError::Corrupt("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(FldError::Version {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(FldError::Checksum { stored, computed });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json_end = PREFIX_LEN
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| FldError::Corrupt("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&body[PREFIX_LEN..json_end])?;
        let mut pos = json_end;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            let end = pos + 8 * n;
            if end > body.len() {
                return Err(FldError::Corrupt(format!(
                    "payload of `{}` is truncated",
                    e.name
                )));
            }
            let data = body[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push((e.name, DenseArray::new(e.shape, data)?));
            pos = end;
        }
        if pos != body.len() {
            return Err(FldError::Corrupt(format!(
                "{} trailing payload bytes",
                body.len() - pos
            )));
        }
        Ok(Self {
            version,
            model: header.model,
            norm: header.norm,
            train_config: header.train_config,
            seed: header.seed,
            iteration: header.iteration,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn save_checkpoint(
    model: &TrainedModel,
    train_config: Option<TrainConfig>,
    iteration: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    ModelCheckpoint::from_model(model, train_config, iteration).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    ModelCheckpoint::load(path)?.to_model()
}
