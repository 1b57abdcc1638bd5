//! Versioned JSON checkpoints for parameter stores.
//!
//! Values are serialised as `f64` regardless of the training precision, which
//! round-trips `f32` weights exactly. Writes go through a temporary file in
//! the target directory followed by an atomic rename, so a crash mid-save
//! never leaves a truncated checkpoint behind.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::Params;
use super::scalar::Scalar;
use super::tensor::Tensor;

const FORMAT: &str = "onestop-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint file (format field {found:?})")]
    Format { found: String },
    #[error("unsupported checkpoint version {found}")]
    Version { found: u32 },
    #[error("checkpoint is missing parameter {0:?}")]
    MissingParam(String),
    #[error("checkpoint has unexpected parameter {0:?}")]
    UnexpectedParam(String),
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct SavedTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    version: u32,
    /// Caller-defined run description (model dimensions, vocab path, …),
    /// stored verbatim and returned on load.
    pub config: serde_json::Value,
    params: BTreeMap<String, SavedTensor>,
}

impl Checkpoint {
    pub fn from_params<S: Scalar>(config: serde_json::Value, params: &Params<S>) -> Self {
        let mut saved = BTreeMap::new();
        for (_, name, tensor) in params.iter() {
            saved.insert(
                name.to_string(),
                SavedTensor {
                    shape: tensor.shape().to_vec(),
                    data: tensor.to_f64_vec(),
                },
            );
        }
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            config,
            params: saved,
        }
    }

    /// Copies saved values into an existing store. The store defines the
    /// parameter set: names and shapes must match exactly in both directions,
    /// so a checkpoint from a differently-sized model is rejected rather than
    /// partially applied.
    pub fn apply_to<S: Scalar>(&self, params: &mut Params<S>) -> Result<(), CheckpointError> {
        for name in self.params.keys() {
            if params.lookup(name).is_none() {
                return Err(CheckpointError::UnexpectedParam(name.clone()));
            }
        }
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let name = params.name(id).to_string();
            let saved = self
                .params
                .get(&name)
                .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
            let expected = params.get(id).shape().to_vec();
            if saved.shape != expected {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected,
                    found: saved.shape.clone(),
                });
            }
            let data: Vec<S> = saved.data.iter().map(|&v| S::from_f64(v)).collect();
            params.set(id, Tensor::from_vec(saved.shape.clone(), data).expect("shape checked"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        let tmp = match dir {
            Some(d) => tempfile::NamedTempFile::new_in(d)?,
            None => tempfile::NamedTempFile::new_in(".")?,
        };
        {
            let mut writer = BufWriter::new(tmp.as_file());
            serde_json::to_writer(&mut writer, self)?;
            writer.flush()?;
        }
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let reader = BufReader::new(File::open(path)?);
        let ckpt: Checkpoint = serde_json::from_reader(reader)?;
        if ckpt.format != FORMAT {
            return Err(CheckpointError::Format { found: ckpt.format });
        }
        if ckpt.version != VERSION {
            return Err(CheckpointError::Version {
                found: ckpt.version,
            });
        }
        Ok(ckpt)
    }
}
