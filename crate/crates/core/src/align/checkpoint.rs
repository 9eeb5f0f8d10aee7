use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{TinyLm, TrainableLm};

pub const MANIFEST_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.json";

/// Describes how a checkpoint was produced. `training` holds the stage
/// config (loss, schedule, seeds) verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmCheckpointManifest {
    pub model: String,
    pub groups: Vec<String>,
    /// Groups that were trainable in the run that produced this checkpoint.
    pub trainable: Vec<bool>,
    pub training: serde_json::Value,
}

pub fn save_tiny_lm(
    dir: impl AsRef<Path>,
    model: &TinyLm,
    trainable: Vec<bool>,
    training: serde_json::Value,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = LmCheckpointManifest {
        model: "tiny_lm".into(),
        groups: model.group_names(),
        trainable,
        training,
    };
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(MODEL_FILE);
    fs::write(&wpath, serde_json::to_vec(model)?).map_err(|e| Error::io(&wpath, e))
}

pub fn load_tiny_lm(dir: impl AsRef<Path>) -> Result<(TinyLm, LmCheckpointManifest)> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let manifest: LmCheckpointManifest =
        serde_json::from_slice(&fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?)?;
    if manifest.model != "tiny_lm" {
        return Err(Error::InvalidInput(format!(
            "unsupported model kind `{}`",
            manifest.model
        )));
    }
    let wpath = dir.join(MODEL_FILE);
    let mut model: TinyLm =
        serde_json::from_slice(&fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?)?;
    model.rebuild_index();
    if model.group_names() != manifest.groups {
        return Err(Error::InvalidInput(
            "checkpoint manifest does not match model layout".into(),
        ));
    }
    Ok((model, manifest))
}
