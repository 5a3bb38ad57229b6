use std::ops::Range;

use super::covariates::CovariateSource;
use super::norm::{instance_normalize, NormStats};
use crate::error::{Error, Result};

/// Windows of `lookback + horizon` points fitting in `segment_len` at stride 1.
pub fn window_count(segment_len: usize, lookback: usize, horizon: usize) -> Result<usize> {
    let need = lookback + horizon;
    if segment_len < need {
        return Err(Error::Dataset(format!(
            "segment of {segment_len} points is too short: need at least L + H_o = {need}"
        )));
    }
    Ok(segment_len - need + 1)
}

/// Input start indices of every window inside `range`, stepping by `stride`.
pub fn window_starts(range: Range<usize>, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<usize>> {
    let count = window_count(range.len(), lookback, horizon)?;
    Ok((0..count).step_by(stride.max(1)).map(|i| range.start + i).collect())
}

/// Instance-normalized look-back windows with their targets and covariates.
///
/// Rows are window-major: row `w·D + v` holds variate `v` of window `w`.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub windows: usize,
    pub variates: usize,
    pub lookback: usize,
    /// Target length; 0 when the batch carries no targets.
    pub horizon: usize,
    pub covariate_channels: usize,
    /// `[rows, lookback]`, normalized.
    pub inputs: Vec<f64>,
    /// `[rows, horizon]`, on the scale of the source series.
    pub targets: Vec<f64>,
    /// `[windows, channels, lookback]`.
    pub covariates: Vec<f64>,
    pub stats: Vec<NormStats>,
    pub variate: Vec<usize>,
    /// Series index of each window's first input point.
    pub starts: Vec<usize>,
}

impl WindowBatch {
    /// Normalizes `raw_inputs` (`[windows·D, L]`, window-major) per row.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        raw_inputs: &[f64],
        targets: Vec<f64>,
        covariates: Vec<f64>,
        windows: usize,
        variates: usize,
        lookback: usize,
        horizon: usize,
        covariate_channels: usize,
        starts: Vec<usize>,
    ) -> Result<Self> {
        let rows = windows * variates;
        if raw_inputs.len() != rows * lookback
            || targets.len() != rows * horizon
            || covariates.len() != windows * covariate_channels * lookback
            || starts.len() != windows
        {
            return Err(Error::shape("window batch", "buffer sizes disagree with batch geometry"));
        }
        let mut inputs = Vec::with_capacity(raw_inputs.len());
        let mut stats = Vec::with_capacity(rows);
        for row in raw_inputs.chunks(lookback) {
            let (n, s) = instance_normalize(row);
            inputs.extend(n);
            stats.push(s);
        }
        Ok(Self {
            windows,
            variates,
            lookback,
            horizon,
            covariate_channels,
            inputs,
            targets,
            covariates,
            stats,
            variate: (0..rows).map(|r| r % variates).collect(),
            starts,
        })
    }

    /// Cuts windows starting at `starts` out of `series` (`[D][T]`).
    pub fn from_series(
        series: &[Vec<f64>],
        starts: &[usize],
        lookback: usize,
        horizon: usize,
        covariates: Option<&CovariateSource>,
    ) -> Result<Self> {
        let d = series.len();
        let len = series.first().map_or(0, Vec::len);
        let mut raw = Vec::with_capacity(starts.len() * d * lookback);
        let mut targets = Vec::with_capacity(starts.len() * d * horizon);
        let mut covs = Vec::new();
        for &s in starts {
            if s + lookback + horizon > len {
                return Err(Error::Dataset(format!(
                    "window at {s} with L={lookback}, H_o={horizon} exceeds series length {len}"
                )));
            }
            for col in series {
                raw.extend_from_slice(&col[s..s + lookback]);
                targets.extend_from_slice(&col[s + lookback..s + lookback + horizon]);
            }
            if let Some(src) = covariates {
                covs.extend(src.window(s, lookback)?);
            }
        }
        let c = covariates.map_or(0, CovariateSource::channels);
        Self::assemble(&raw, targets, covs, starts.len(), d, lookback, horizon, c, starts.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.windows * self.variates
    }

    pub fn input_row(&self, row: usize) -> &[f64] {
        &self.inputs[row * self.lookback..(row + 1) * self.lookback]
    }

    pub fn target_row(&self, row: usize) -> &[f64] {
        &self.targets[row * self.horizon..(row + 1) * self.horizon]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_formula() {
        assert_eq!(window_count(700, 672, 24).unwrap(), 5);
        assert!(window_count(695, 672, 24).unwrap_err().to_string().contains("696"));
    }

    #[test]
    fn etth1_train_windows() {
        let per_variate = window_count(8545, 672, 24).unwrap();
        assert_eq!(per_variate, 7850);
        assert_eq!(per_variate * 7, 54950);
    }

    #[test]
    fn rows_pair_inputs_with_following_targets() {
        let series = vec![(0..20).map(f64::from).collect::<Vec<_>>(), (100..120).map(f64::from).collect()];
        let b = WindowBatch::from_series(&series, &[3, 7], 5, 2, None).unwrap();
        assert_eq!(b.rows(), 4);
        assert_eq!(b.variate, vec![0, 1, 0, 1]);
        assert_eq!(b.target_row(1), &[108.0, 109.0]);
        assert_eq!(b.target_row(2), &[12.0, 13.0]);
        assert!((b.stats[3].mean - 109.0).abs() < 1e-12);
    }
}
