use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train/validation/test lengths in time points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSpec {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Published split lengths for the standard benchmarks, matched by file stem.
    pub fn known(dataset: &str) -> Option<Self> {
        let key = dataset.to_ascii_lowercase();
        let spec = match key.as_str() {
            "etth1" | "etth2" => Self::new(8545, 2881, 2881),
            "ettm1" | "ettm2" => Self::new(34465, 11521, 11521),
            "weather" => Self::new(36792, 5271, 10540),
            "ecl" | "electricity" => Self::new(18317, 2633, 5261),
            "traffic" => Self::new(12185, 1757, 3509),
            _ => return None,
        };
        Some(spec)
    }

    /// Known split for `dataset`, else 70/10/20 of `len`.
    pub fn for_dataset(dataset: &str, len: usize) -> Self {
        Self::known(dataset).unwrap_or_else(|| Self::proportional(len, 0.7, 0.1))
    }

    pub fn proportional(len: usize, train: f64, val: f64) -> Self {
        let train = (len as f64 * train).floor() as usize;
        let val = (len as f64 * val).floor() as usize;
        Self::new(train, val, len - train - val)
    }
}

/// Index ranges of the three chronological segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Train,
    Val,
    Test,
}

impl Splits {
    pub fn range(&self, segment: Segment) -> Range<usize> {
        match segment {
            Segment::Train => self.train.clone(),
            Segment::Val => self.val.clone(),
            Segment::Test => self.test.clone(),
        }
    }

    /// Points usable for windows targeting `segment`: the segment itself, with
    /// validation and test extended `lookback` points to the left for inputs.
    pub fn window_source(&self, segment: Segment, lookback: usize) -> Range<usize> {
        let r = self.range(segment);
        match segment {
            Segment::Train => r,
            _ => r.start.saturating_sub(lookback)..r.end,
        }
    }
}

/// Splits a series of length `len`; the segments are anchored to its end so the
/// test segment covers the final points.
pub fn chronological_split(len: usize, spec: SplitSpec) -> Result<Splits> {
    if spec.total() > len {
        return Err(Error::Dataset(format!(
            "split {}+{}+{} = {} exceeds series length {len}",
            spec.train,
            spec.val,
            spec.test,
            spec.total()
        )));
    }
    let start = len - spec.total();
    let val_start = start + spec.train;
    let test_start = val_start + spec.val;
    Ok(Splits {
        train: start..val_start,
        val: val_start..test_start,
        test: test_start..len,
    })
}
