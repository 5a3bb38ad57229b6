use chrono::{Datelike, NaiveDateTime, TimeDelta, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calendar field mapped affinely onto `[-0.5, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalendarField {
    MinuteOfHour,
    HourOfDay,
    /// Monday = 0.
    DayOfWeek,
    DayOfMonth,
    DayOfYear,
    MonthOfYear,
}

impl CalendarField {
    pub const ALL: [CalendarField; 6] = [
        CalendarField::MinuteOfHour,
        CalendarField::HourOfDay,
        CalendarField::DayOfWeek,
        CalendarField::DayOfMonth,
        CalendarField::DayOfYear,
        CalendarField::MonthOfYear,
    ];

    pub fn value(self, t: &NaiveDateTime) -> f64 {
        let (v, max) = match self {
            CalendarField::MinuteOfHour => (t.minute() as f64, 59.0),
            CalendarField::HourOfDay => (t.hour() as f64, 23.0),
            CalendarField::DayOfWeek => (t.weekday().num_days_from_monday() as f64, 6.0),
            CalendarField::DayOfMonth => (t.day0() as f64, 30.0),
            CalendarField::DayOfYear => (t.ordinal0() as f64, 365.0),
            CalendarField::MonthOfYear => (t.month0() as f64, 11.0),
        };
        v / max - 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub fields: Vec<CalendarField>,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        Self {
            fields: CalendarField::ALL.to_vec(),
        }
    }
}

impl CovariateSpec {
    pub fn none() -> Self {
        Self { fields: Vec::new() }
    }

    pub fn count(&self) -> usize {
        self.fields.len()
    }
}

/// `[C][len]` covariates for the given timestamps.
pub fn calendar_covariates(timestamps: &[NaiveDateTime], spec: &CovariateSpec) -> Vec<Vec<f64>> {
    spec.fields
        .iter()
        .map(|f| timestamps.iter().map(|t| f.value(t)).collect())
        .collect()
}

/// Produces covariates for any index of a regular time axis, optionally bounded.
#[derive(Debug, Clone)]
pub struct CovariateSource {
    pub start: NaiveDateTime,
    pub freq: TimeDelta,
    pub spec: CovariateSpec,
    /// Number of indices the source can describe; `None` synthesizes any future timestamp.
    pub available: Option<usize>,
}

impl CovariateSource {
    /// Flat `[C·len]` covariates for indices `from..from + len`.
    pub fn window(&self, from: usize, len: usize) -> Result<Vec<f64>> {
        if let Some(available) = self.available {
            if from + len > available {
                return Err(Error::CovariatesExhausted {
                    needed: from + len - 1,
                    available,
                });
            }
        }
        let stamps: Vec<NaiveDateTime> = (from..from + len)
            .map(|i| self.start + self.freq * i as i32)
            .collect();
        Ok(calendar_covariates(&stamps, &self.spec).concat())
    }

    pub fn channels(&self) -> usize {
        self.spec.count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn at(y: i32, m: u32, d: u32, h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    #[test]
    fn hour_endpoints() {
        assert_eq!(CalendarField::HourOfDay.value(&at(2018, 1, 1, 0)), -0.5);
        assert_eq!(CalendarField::HourOfDay.value(&at(2018, 1, 1, 23)), 0.5);
    }

    #[test]
    fn monday_is_lower_endpoint() {
        // 2018-07-02 is a Monday.
        assert_eq!(CalendarField::DayOfWeek.value(&at(2018, 7, 2, 12)), -0.5);
    }

    #[test]
    fn noon_july_second() {
        let t = at(2018, 7, 2, 12);
        assert!((CalendarField::HourOfDay.value(&t) - (12.0 / 23.0 - 0.5)).abs() < 1e-12);
        assert!((CalendarField::HourOfDay.value(&t) - 0.0217).abs() < 1e-4);
        assert!((CalendarField::DayOfMonth.value(&t) - (1.0 / 30.0 - 0.5)).abs() < 1e-12);
        assert!((CalendarField::DayOfYear.value(&t) - (182.0 / 365.0 - 0.5)).abs() < 1e-12);
        assert!((CalendarField::MonthOfYear.value(&t) - (6.0 / 11.0 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn bounded_source_reports_exhaustion() {
        let src = CovariateSource {
            start: at(2018, 1, 1, 0),
            freq: TimeDelta::hours(1),
            spec: CovariateSpec::default(),
            available: Some(10),
        };
        assert_eq!(src.window(2, 8).unwrap().len(), 48);
        assert!(matches!(src.window(5, 6), Err(Error::CovariatesExhausted { needed: 10, available: 10 })));
    }
}
