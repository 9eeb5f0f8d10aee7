use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{EmbeddingModel, ProjectionEncoder, TrainMetrics};

pub const MANIFEST_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "weights.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub train_size: usize,
    pub dev_size: usize,
    pub final_dev_spearman: Option<f64>,
}

impl Provenance {
    pub fn from_metrics(seed: u64, learning_rate: f64, metrics: &TrainMetrics) -> Self {
        let last = metrics.final_epoch();
        Provenance {
            seed,
            epochs: last.epoch,
            learning_rate,
            train_size: metrics.train_size,
            dev_size: metrics.dev_size,
            final_dev_spearman: last.dev_spearman.is_finite().then_some(last.dev_spearman),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub encoder: String,
    pub dimension: usize,
    pub input_dimension: usize,
    pub normalized: bool,
    pub max_words: usize,
    pub provenance: Option<Provenance>,
}

pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    model: &EmbeddingModel<ProjectionEncoder>,
    provenance: Option<Provenance>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CheckpointManifest {
        encoder: "projection".into(),
        dimension: model.encoder.dim,
        input_dimension: model.encoder.input_dim,
        normalized: model.normalized,
        max_words: model.max_words,
        provenance,
    };
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, serde_json::to_vec(&model.encoder.weights)?).map_err(|e| Error::io(&wpath, e))
}

pub fn load_checkpoint(
    dir: impl AsRef<Path>,
) -> Result<(EmbeddingModel<ProjectionEncoder>, CheckpointManifest)> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let manifest: CheckpointManifest =
        serde_json::from_slice(&fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?)?;
    if manifest.encoder != "projection" {
        return Err(Error::InvalidInput(format!(
            "unsupported encoder kind `{}` in checkpoint",
            manifest.encoder
        )));
    }
    let wpath = dir.join(WEIGHTS_FILE);
    let weights: Vec<f64> =
        serde_json::from_slice(&fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?)?;
    if weights.len() != manifest.dimension * manifest.input_dimension {
        return Err(Error::InvalidInput(format!(
            "checkpoint holds {} weights, manifest implies {}",
            weights.len(),
            manifest.dimension * manifest.input_dimension
        )));
    }
    let model = EmbeddingModel {
        encoder: ProjectionEncoder {
            input_dim: manifest.input_dimension,
            dim: manifest.dimension,
            weights,
        },
        normalized: manifest.normalized,
        max_words: manifest.max_words,
    };
    Ok((model, manifest))
}
