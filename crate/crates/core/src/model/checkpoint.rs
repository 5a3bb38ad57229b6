//! Checkpoints: a tensor snapshot plus a JSON sidecar with the model configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, MoHets};
use crate::error::{Error, Result};
use crate::tensor::{snapshot, Element, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub model: ModelConfig,
    /// Free-form run metadata (dataset, scaler, training settings).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes parameters as 32-bit tensors to `path` and the sidecar to `path.json`.
pub fn save<T: Element>(model: &MoHets<T>, path: &Path, meta: serde_json::Value) -> Result<()> {
    let cast: Vec<(String, Tensor<f32>)> = model
        .params
        .named()
        .map(|(n, t)| (n.to_string(), t.cast()))
        .collect();
    let entries: Vec<(&str, &Tensor<f32>)> = cast.iter().map(|(n, t)| (n.as_str(), t)).collect();
    snapshot::save(path, &entries)?;
    let sidecar = Sidecar {
        model: model.config.clone(),
        meta,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::Checkpoint {
        path: side.clone(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
        path: side,
        message: e.to_string(),
    })
}

pub fn load<T: Element>(path: &Path) -> Result<(MoHets<T>, Sidecar)> {
    let sidecar = read_sidecar(path)?;
    let mut model = MoHets::<T>::new(sidecar.model.clone(), 0)?;
    let tensors = snapshot::load::<T>(path)?;
    let bad = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    if tensors.len() != model.params.len() {
        return Err(bad(format!(
            "{} tensors but the configured model has {}",
            tensors.len(),
            model.params.len()
        )));
    }
    for (name, value) in tensors {
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| bad(format!("unexpected tensor `{name}`")))?;
        if model.params.value(id).shape() != value.shape() {
            return Err(bad(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                value.shape(),
                model.params.value(id).shape()
            )));
        }
        *model.params.value_mut(id) = value;
    }
    Ok((model, sidecar))
}
