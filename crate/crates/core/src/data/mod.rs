//! Ingestion, chronological splits, windows, normalization, patches and calendar covariates.

pub mod covariates;
pub mod dataset;
pub mod frame;
pub mod norm;
pub mod patch;
pub mod split;
pub mod synthetic;
pub mod windows;

pub use covariates::{calendar_covariates, CalendarField, CovariateSource, CovariateSpec};
pub use dataset::{DataConfig, Dataset, SplitManifest};
pub use frame::{load_csv, TimeSeriesFrame};
pub use norm::{instance_denormalize, instance_normalize, NormStats, Standardizer, NORM_EPS};
pub use patch::{patch_count, patchify};
pub use split::{chronological_split, Segment, SplitSpec, Splits};
pub use windows::{window_count, window_starts, WindowBatch};
