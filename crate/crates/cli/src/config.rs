//! Run configuration: preset, dataset defaults, JSON file and flags, in that order.

use std::path::Path;

use mohets::data::{CovariateSpec, DataConfig, SplitSpec};
use mohets::model::{DatasetDefaults, ModelConfig};
use mohets::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::{ModelArgs, TrainingArgs};
use crate::error::{CliError, CliResult};

/// Data handling options that are not part of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub standardize: bool,
    pub split: Option<SplitSpec>,
    pub covariates: CovariateSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            standardize: true,
            split: None,
            covariates: CovariateSpec::default(),
        }
    }
}

/// Fully resolved settings of one run; this is what manifests record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSection,
}

impl RunConfig {
    pub fn data_config(&self) -> DataConfig {
        let mut d = DataConfig::new(self.model.lookback, self.model.horizon);
        d.standardize = self.data.standardize;
        d.split = self.data.split;
        d.covariates = if self.model.covariates == 0 {
            CovariateSpec::none()
        } else {
            self.data.covariates.clone()
        };
        d
    }
}

/// Overlays `patch` onto `base`, rejecting keys `base` does not have.
/// Objects merge recursively; anything else replaces the base value.
pub fn merge_strict(base: &mut Value, patch: &Value, path: &str) -> CliResult<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_strict(slot, v, &key)?,
                    Some(slot) => *slot = v.clone(),
                    None => return Err(CliError::usage(format!("unknown config key `{key}`"))),
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&Value>, section: &str) -> CliResult<T> {
    let Some(patch) = patch else {
        return Ok(serde_json::from_value(serde_json::to_value(base)?)?);
    };
    if !patch.is_object() {
        return Err(CliError::usage(format!("config section `{section}` must be an object")));
    }
    let mut value = serde_json::to_value(base)?;
    merge_strict(&mut value, patch, section)?;
    serde_json::from_value(value).map_err(|e| CliError::usage(format!("config section `{section}`: {e}")))
}

/// Reads a config file and checks its top-level sections.
pub fn read_config_file(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(map) = &value else {
        return Err(CliError::usage(format!("config {} must be a JSON object", path.display())));
    };
    if let Some(k) = map.keys().find(|k| !["model", "train", "data"].contains(&k.as_str())) {
        return Err(CliError::usage(format!(
            "unknown config key `{k}` (expected model, train, data)"
        )));
    }
    Ok(value)
}

/// Resolves the configuration of a run on dataset `name` with `variates` columns,
/// starting from `train_base` before dataset defaults, file and flags apply.
pub fn resolve(
    name: &str,
    variates: usize,
    model: &ModelArgs,
    training: &TrainingArgs,
    seed: u64,
    train_base: TrainConfig,
) -> CliResult<RunConfig> {
    let defaults = DatasetDefaults::for_dataset(name);
    let preset = model
        .preset
        .as_deref()
        .or(defaults.map(|d| d.preset))
        .unwrap_or("tiny");
    let mut m = ModelConfig::preset(preset).map_err(|e| CliError::usage(e.to_string()))?;
    let mut t = train_base;
    if let Some(d) = defaults {
        m.patch_len = d.patch_len;
        m.horizon = d.horizon;
        t.max_lr = d.max_lr;
        t.batch_size = d.batch_size;
        t.epochs = d.epochs;
        log::info!("using {name} defaults: {d:?}");
    }
    let file = model.config.as_deref().map(read_config_file).transpose()?;
    let section = |k: &str| file.as_ref().and_then(|f| f.get(k));
    let mut m = overlay(&m, section("model"), "model")?;
    let mut t = overlay(&t, section("train"), "train")?;
    let data = overlay(&DataSection::default(), section("data"), "data")?;

    if let Some(p) = model.patch {
        m.patch_len = p;
    }
    if let Some(h) = model.hout {
        m.horizon = h;
    }
    if let Some(l) = model.lookback {
        m.lookback = l;
    }
    m.variates = variates;
    // A zero channel count from the config file also disables covariates.
    m.covariates = if model.no_covariates || m.covariates == 0 {
        0
    } else {
        data.covariates.count()
    };

    if let Some(v) = training.epochs {
        t.epochs = v;
    }
    if let Some(v) = training.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = training.lr {
        t.max_lr = v;
    }
    if let Some(v) = training.min_lr {
        t.min_lr = v;
    }
    if training.max_steps.is_some() {
        t.max_steps = training.max_steps;
    }
    if let Some(v) = training.patience {
        t.patience = v;
    }
    if training.no_clip {
        t.clip_norm = None;
    }
    if training.max_val_windows.is_some() {
        t.max_val_windows = training.max_val_windows;
    }
    t.seed = seed;
    // A small `--lr` pulls the default floor down with it; an explicit floor is validated.
    if training.min_lr.is_none() && t.min_lr > t.max_lr {
        t.min_lr = t.max_lr;
    }

    m.validate().map_err(|e| CliError::usage(e.to_string()))?;
    t.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(RunConfig { model: m, train: t, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn no_flags() -> (ModelArgs, TrainingArgs) {
        (
            ModelArgs {
                preset: None,
                config: None,
                patch: None,
                hout: None,
                lookback: None,
                no_covariates: false,
            },
            TrainingArgs {
                epochs: None,
                batch_size: None,
                lr: None,
                min_lr: None,
                max_steps: None,
                patience: None,
                no_clip: false,
                max_val_windows: None,
            },
        )
    }

    #[test]
    fn merge_rejects_unknown_nested_key() {
        let mut base = json!({"a": 1, "b": {"c": 2}});
        merge_strict(&mut base, &json!({"b": {"c": 5}}), "model").unwrap();
        assert_eq!(base["b"]["c"], 5);
        let err = merge_strict(&mut base, &json!({"b": {"zz": 1}}), "model").unwrap_err();
        assert!(err.to_string().contains("model.b.zz"), "{err}");
    }

    #[test]
    fn etth1_defaults_match_the_published_row() {
        let (m, t) = no_flags();
        let cfg = resolve("ETTh1", 7, &m, &t, 3, TrainConfig::default()).unwrap();
        assert_eq!(cfg.model, {
            let mut c = ModelConfig::tiny();
            c.patch_len = 8;
            c.horizon = 24;
            c
        });
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.train.seed, 3);
    }

    #[test]
    fn flags_override_dataset_defaults() {
        let (mut m, t) = no_flags();
        m.preset = Some("base".into());
        m.patch = Some(16);
        m.hout = Some(32);
        let cfg = resolve("mystery", 3, &m, &t, 0, TrainConfig::default()).unwrap();
        assert_eq!(cfg.model.d_model, ModelConfig::base().d_model);
        assert_eq!(cfg.model.patch_len, 16);
        assert_eq!(cfg.model.horizon, 32);
        assert_eq!(cfg.model.variates, 3);
    }

    #[test]
    fn unknown_preset_is_a_usage_error() {
        let (mut m, t) = no_flags();
        m.preset = Some("huge".into());
        let err = resolve("x", 1, &m, &t, 0, TrainConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("huge"));
    }

    #[test]
    fn no_covariates_clears_channels() {
        let (mut m, t) = no_flags();
        m.no_covariates = true;
        let cfg = resolve("x", 2, &m, &t, 0, TrainConfig::default()).unwrap();
        assert_eq!(cfg.model.covariates, 0);
        assert_eq!(cfg.data_config().covariates.count(), 0);
    }
}
