use serde::{Deserialize, Serialize};

use super::covariates::{CovariateSource, CovariateSpec};
use super::frame::TimeSeriesFrame;
use super::norm::Standardizer;
use super::split::{chronological_split, Segment, SplitSpec, Splits};
use super::windows::{window_starts, WindowBatch};
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub covariates: CovariateSpec,
    /// Z-score each variate with statistics of the training segment.
    pub standardize: bool,
    /// Explicit split; the dataset's published split or 70/10/20 otherwise.
    pub split: Option<SplitSpec>,
}

impl DataConfig {
    pub fn new(lookback: usize, horizon: usize) -> Self {
        Self {
            lookback,
            horizon,
            covariates: CovariateSpec::default(),
            standardize: true,
            split: None,
        }
    }
}

/// A frame with its split, scaling and covariate source resolved.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub frame: TimeSeriesFrame,
    /// `[D][T]` after standardization.
    pub series: Vec<Vec<f64>>,
    pub scaler: Standardizer,
    pub split_spec: SplitSpec,
    pub splits: Splits,
    pub lookback: usize,
    pub horizon: usize,
    pub covariates: Option<CovariateSource>,
}

/// JSON record of how a dataset was split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dataset: String,
    pub lengths: SplitSpec,
    #[serde(rename = "L")]
    pub lookback: usize,
    #[serde(rename = "H_o")]
    pub horizon: usize,
    pub seed: u64,
    pub ranges: Splits,
}

impl Dataset {
    pub fn prepare(name: &str, frame: TimeSeriesFrame, config: &DataConfig) -> Result<Self> {
        let split_spec = config
            .split
            .unwrap_or_else(|| SplitSpec::for_dataset(name, frame.len()));
        let splits = chronological_split(frame.len(), split_spec)?;
        let scaler = if config.standardize {
            Standardizer::fit(frame.values(), splits.train.clone())
        } else {
            Standardizer::identity(frame.variates())
        };
        let series = frame
            .values()
            .iter()
            .enumerate()
            .map(|(v, col)| col.iter().map(|&x| scaler.apply(v, x)).collect())
            .collect();
        let covariates = (config.covariates.count() > 0).then(|| CovariateSource {
            start: frame.start(),
            freq: frame.freq(),
            spec: config.covariates.clone(),
            available: None,
        });
        Ok(Self {
            name: name.to_string(),
            frame,
            series,
            scaler,
            split_spec,
            splits,
            lookback: config.lookback,
            horizon: config.horizon,
            covariates,
        })
    }

    pub fn variates(&self) -> usize {
        self.frame.variates()
    }

    pub fn covariate_channels(&self) -> usize {
        self.covariates.as_ref().map_or(0, CovariateSource::channels)
    }

    /// Window start indices for `segment` with targets of length `horizon`.
    pub fn starts_for(&self, segment: Segment, horizon: usize, stride: usize) -> Result<Vec<usize>> {
        window_starts(self.splits.window_source(segment, self.lookback), self.lookback, horizon, stride)
    }

    pub fn window_starts(&self, segment: Segment, stride: usize) -> Result<Vec<usize>> {
        self.starts_for(segment, self.horizon, stride)
    }

    pub fn batch(&self, starts: &[usize]) -> Result<WindowBatch> {
        WindowBatch::from_series(&self.series, starts, self.lookback, self.horizon, self.covariates.as_ref())
    }

    pub fn manifest(&self, seed: u64) -> SplitManifest {
        SplitManifest {
            dataset: self.name.clone(),
            lengths: self.split_spec,
            lookback: self.lookback,
            horizon: self.horizon,
            seed,
            ranges: self.splits.clone(),
        }
    }
}
