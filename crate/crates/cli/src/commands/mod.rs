mod compare;
mod eval;
mod forecast;
mod gradcheck;
mod train;

pub use compare::{ablate, sweep, ComparisonRow};
pub use eval::eval;
pub use forecast::forecast;
pub use gradcheck::gradcheck;
pub use train::train;

use std::path::{Path, PathBuf};

use mohets::data::{load_csv, synthetic, DataConfig, Standardizer, TimeSeriesFrame};
use mohets::eval::{EvalOptions, Renorm};
use mohets::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::{DataArgs, EvalFlags, RenormArg};
use crate::error::{CliError, CliResult};

/// Where a run's series came from, so later commands can reload it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Csv {
        path: PathBuf,
        timestamp_column: String,
    },
    Synthetic {
        variates: usize,
        len: usize,
        noise: f64,
        seed: u64,
    },
}

impl Source {
    /// The source named by the flags, if any.
    pub fn from_args(args: &DataArgs, seed: u64) -> Option<Self> {
        if let Some(path) = &args.data {
            Some(Source::Csv {
                path: path.clone(),
                timestamp_column: args.timestamp_column.clone(),
            })
        } else if args.synthetic {
            Some(Source::Synthetic {
                variates: args.synthetic_variates,
                len: args.synthetic_len,
                noise: args.synthetic_noise,
                seed,
            })
        } else {
            None
        }
    }

    pub fn load(&self) -> CliResult<TimeSeriesFrame> {
        Ok(match self {
            Source::Csv { path, timestamp_column } => load_csv(path, timestamp_column)?,
            Source::Synthetic {
                variates,
                len,
                noise,
                seed,
            } => synthetic::multi_sine(*variates, *len, *noise, *seed)?,
        })
    }

    /// File stem for CSVs, `synthetic` otherwise.
    pub fn default_name(&self) -> String {
        match self {
            Source::Csv { path, .. } => path
                .file_stem()
                .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned()),
            Source::Synthetic { .. } => "synthetic".to_string(),
        }
    }
}

/// Metadata stored in every checkpoint sidecar by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dataset: String,
    pub source: Source,
    pub data: DataConfig,
    pub scaler: Standardizer,
    pub train: TrainConfig,
}

impl CheckpointMeta {
    pub fn from_sidecar(meta: &serde_json::Value, path: &Path) -> CliResult<Self> {
        serde_json::from_value(meta.clone()).map_err(|e| {
            CliError::Core(mohets::Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("sidecar metadata: {e}"),
            })
        })
    }
}

/// Source and dataset name from the flags, falling back to a checkpoint's record.
fn pick_source(args: &DataArgs, seed: u64, meta: Option<&CheckpointMeta>) -> CliResult<(Source, String)> {
    match (Source::from_args(args, seed), meta) {
        (Some(s), _) => {
            let name = args.dataset_name.clone().unwrap_or_else(|| s.default_name());
            Ok((s, name))
        }
        (None, Some(m)) => Ok((m.source.clone(), args.dataset_name.clone().unwrap_or_else(|| m.dataset.clone()))),
        (None, None) => Err(CliError::usage("pass --data PATH or --synthetic")),
    }
}

impl From<RenormArg> for Renorm {
    fn from(r: RenormArg) -> Self {
        match r {
            RenormArg::PerChunk => Renorm::PerChunk,
            RenormArg::Frozen => Renorm::Frozen,
        }
    }
}

impl EvalFlags {
    pub fn options(&self) -> CliResult<EvalOptions> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(CliError::usage("--horizons needs positive values"));
        }
        if self.stride == Some(0) || self.batch_windows == 0 {
            return Err(CliError::usage("--stride and --batch-windows must be positive"));
        }
        Ok(EvalOptions {
            horizons: self.horizons.clone(),
            stride: self.stride,
            renorm: self.renorm.into(),
            batch_windows: self.batch_windows,
            max_windows: self.max_windows,
            ..EvalOptions::default()
        })
    }
}

/// Filesystem-safe form of a label.
fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-")
}
