use chrono::{NaiveDate, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::frame::TimeSeriesFrame;
use crate::error::Result;

/// Hourly series where each variate is a sum of sines with periods 24, 12 and 6
/// (random amplitudes and phases) plus optional Gaussian noise.
pub fn multi_sine(variates: usize, len: usize, noise: f64, seed: u64) -> Result<TimeSeriesFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let periods = [24.0, 12.0, 6.0];
    let noise = Normal::new(0.0, noise.max(0.0)).expect("valid std");
    let values = (0..variates)
        .map(|_| {
            let comps: Vec<(f64, f64, f64)> = periods
                .iter()
                .map(|&p| (rng.random_range(0.3..1.5), rng.random_range(0.0..std::f64::consts::TAU), p))
                .collect();
            let level = rng.random_range(-1.0..1.0);
            (0..len)
                .map(|t| {
                    let s: f64 = comps
                        .iter()
                        .map(|&(a, phi, p)| a * (std::f64::consts::TAU * t as f64 / p + phi).sin())
                        .sum();
                    level + s + noise.sample(&mut rng)
                })
                .collect()
        })
        .collect();
    let names = (0..variates).map(|v| format!("s{v}")).collect();
    let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    TimeSeriesFrame::regular(names, values, start, TimeDelta::hours(1))
}

/// A pure sine of the given period on every variate.
pub fn sine(variates: usize, len: usize, period: f64) -> Result<TimeSeriesFrame> {
    let values = (0..variates)
        .map(|v| {
            (0..len)
                .map(|t| (std::f64::consts::TAU * t as f64 / period + v as f64).sin())
                .collect()
        })
        .collect();
    let names = (0..variates).map(|v| format!("s{v}")).collect();
    let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    TimeSeriesFrame::regular(names, values, start, TimeDelta::hours(1))
}
