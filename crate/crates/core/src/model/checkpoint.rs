//! Model persistence: a JSON manifest next to a flat little-endian `f64`
//! weight blob.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, ModelDims};
use crate::datagen::{NormStats, WindowSpec};
use crate::error::{Error, Result};
use crate::graph::LineId;
use crate::tensor::Matrix;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// How a checkpoint was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_windows: usize,
    pub val_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: u32,
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub line_ids: Vec<LineId>,
    pub params: Vec<ParamEntry>,
    pub schema_hash: String,
    pub window: WindowSpec,
    pub normalization: NormStats,
    /// Dataset directory the model was trained on.
    pub data_dir: Option<PathBuf>,
    pub training: Option<TrainingRecord>,
    /// File name of the weight blob, relative to the manifest.
    pub weights_file: String,
    pub weights_sha256: String,
}

/// Everything needed to rebuild a trained model and its data pipeline.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<Matrix>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Weight blob path belonging to a manifest path.
pub fn weights_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn from_model(
        model: &Model,
        line_ids: Vec<LineId>,
        schema_hash: String,
        window: WindowSpec,
        normalization: NormStats,
        data_dir: Option<PathBuf>,
        training: Option<TrainingRecord>,
    ) -> Self {
        let params = model
            .param_names()
            .iter()
            .zip(model.params())
            .map(|(name, p)| ParamEntry {
                name: name.clone(),
                rows: p.rows(),
                cols: p.cols(),
            })
            .collect();
        Checkpoint {
            meta: CheckpointMeta {
                format: CHECKPOINT_FORMAT,
                config: model.config().clone(),
                dims: *model.dims(),
                line_ids,
                params,
                schema_hash,
                window,
                normalization,
                data_dir,
                training,
                weights_file: String::new(),
                weights_sha256: String::new(),
            },
            params: model.params().to_vec(),
        }
    }

    /// Writes `path` (manifest) and the weight blob beside it.
    pub fn save(&mut self, path: &Path) -> Result<()> {
        let mut blob = Vec::with_capacity(8 * self.params.iter().map(Matrix::len).sum::<usize>());
        for p in &self.params {
            for v in p.as_slice() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bin = weights_path(path);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&bin, &blob)?;
        self.meta.weights_file = bin
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.meta.weights_sha256 = sha256_hex(&blob);
        crate::datagen::io::write_json(path, &self.meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: CheckpointMeta =
            crate::datagen::io::read_json(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {} (expected {CHECKPOINT_FORMAT})",
                meta.format
            )));
        }
        let bin = path.parent().unwrap_or(Path::new(".")).join(&meta.weights_file);
        let blob = std::fs::read(&bin).map_err(|e| Error::Checkpoint(format!("{}: {e}", bin.display())))?;
        if sha256_hex(&blob) != meta.weights_sha256 {
            return Err(Error::Checkpoint(format!(
                "{}: weight checksum mismatch",
                bin.display()
            )));
        }
        let expected: usize = meta.params.iter().map(|p| p.rows * p.cols).sum();
        if blob.len() != 8 * expected {
            return Err(Error::Checkpoint(format!(
                "{}: {} bytes, expected {}",
                bin.display(),
                blob.len(),
                8 * expected
            )));
        }
        let mut values = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let params = meta
            .params
            .iter()
            .map(|p| Matrix::from_vec(p.rows, p.cols, values.by_ref().take(p.rows * p.cols).collect()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint { meta, params })
    }

    /// Rebuilds the model; the graph operator is not stored and must be
    /// derived from the dataset topology.
    pub fn into_model(self, operator: Option<Matrix>) -> Result<Model> {
        let model = Model::from_params(self.meta.config, self.meta.dims, operator, self.params)?;
        for (entry, name) in self.meta.params.iter().zip(model.param_names()) {
            if &entry.name != name {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` found where `{name}` was expected",
                    entry.name
                )));
            }
        }
        Ok(model)
    }
}
