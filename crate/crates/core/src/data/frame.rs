use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};

use crate::error::{Error, Result};

/// A regularly sampled multivariate series.
#[derive(Debug, Clone)]
pub struct TimeSeriesFrame {
    names: Vec<String>,
    /// `values[v][t]`
    values: Vec<Vec<f64>>,
    timestamps: Vec<NaiveDateTime>,
    freq: TimeDelta,
}

const FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d %H:%M",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

impl TimeSeriesFrame {
    /// Builds a frame with timestamps `start + t·freq`.
    pub fn regular(names: Vec<String>, values: Vec<Vec<f64>>, start: NaiveDateTime, freq: TimeDelta) -> Result<Self> {
        if names.len() != values.len() || names.is_empty() {
            return Err(Error::Dataset(format!(
                "{} names for {} variates",
                names.len(),
                values.len()
            )));
        }
        let len = values[0].len();
        if values.iter().any(|v| v.len() != len) {
            return Err(Error::Dataset("variates differ in length".into()));
        }
        if freq <= TimeDelta::zero() {
            return Err(Error::Dataset("frequency must be positive".into()));
        }
        if let Some((v, t)) = values
            .iter()
            .enumerate()
            .find_map(|(v, col)| col.iter().position(|x| !x.is_finite()).map(|t| (v, t)))
        {
            return Err(Error::Dataset(format!("non-finite value in {} at index {t}", names[v])));
        }
        let timestamps = (0..len).map(|t| start + freq * t as i32).collect();
        Ok(Self {
            names,
            values,
            timestamps,
            freq,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn variates(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn freq(&self) -> TimeDelta {
        self.freq
    }

    pub fn start(&self) -> NaiveDateTime {
        self.timestamps[0]
    }

    /// Timestamp of index `t`, which may lie beyond the end of the frame.
    pub fn timestamp_at(&self, t: usize) -> NaiveDateTime {
        self.start() + self.freq * t as i32
    }

    /// Same frame with each variate mapped by `f(variate, value)`.
    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(v, col)| col.iter().map(|&x| f(v, x)).collect())
            .collect();
        Self {
            values,
            ..self.clone()
        }
    }
}

/// Reads a CSV whose `timestamp_column` holds timestamps and whose other
/// columns are numeric variates.
pub fn load_csv(path: &Path, timestamp_column: &str) -> Result<TimeSeriesFrame> {
    let data_err = |row: usize, message: String| Error::Data {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Dataset(format!("{}: {io}", path.display())),
        other => Error::Dataset(format!("{}: {other:?}", path.display())),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| data_err(1, e.to_string()))?
        .clone();
    let ts_idx = headers
        .iter()
        .position(|h| h.trim() == timestamp_column)
        .ok_or_else(|| data_err(1, format!("no timestamp column `{timestamp_column}`")))?;
    let value_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != ts_idx).collect();
    if value_cols.is_empty() {
        return Err(data_err(1, "no value columns".into()));
    }
    let names: Vec<String> = value_cols.iter().map(|&i| headers[i].trim().to_string()).collect();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut timestamps = Vec::new();
    for (r, record) in reader.records().enumerate() {
        // Line numbers count the header as line 1.
        let row = r + 2;
        let record = record.map_err(|e| data_err(row, e.to_string()))?;
        let ts = record.get(ts_idx).unwrap_or_default();
        let ts = parse_timestamp(ts).ok_or_else(|| data_err(row, format!("unparsable timestamp `{ts}`")))?;
        for (out, (&c, name)) in values.iter_mut().zip(value_cols.iter().zip(&names)) {
            let raw = record.get(c).unwrap_or_default().trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| data_err(row, format!("column `{name}`: unparsable number `{raw}`")))?;
            if !v.is_finite() {
                return Err(data_err(row, format!("column `{name}`: non-finite value")));
            }
            out.push(v);
        }
        timestamps.push((row, ts));
    }
    if timestamps.len() < 2 {
        return Err(Error::Dataset(format!(
            "{}: need at least 2 rows to infer the frequency",
            path.display()
        )));
    }
    let freq = timestamps[1].1 - timestamps[0].1;
    if freq <= TimeDelta::zero() {
        return Err(data_err(timestamps[1].0, "timestamps not increasing".into()));
    }
    for w in timestamps.windows(2) {
        let gap = w[1].1 - w[0].1;
        if gap != freq {
            return Err(data_err(
                w[1].0,
                format!(
                    "irregular spacing: gap of {} min after {}, expected {} min",
                    gap.num_minutes(),
                    w[0].1,
                    freq.num_minutes()
                ),
            ));
        }
    }
    Ok(TimeSeriesFrame {
        names,
        values,
        timestamps: timestamps.into_iter().map(|(_, t)| t).collect(),
        freq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn infers_fifteen_minute_frequency() {
        let f = write("date,a,b\n2016-07-01 00:00:00,1,2\n2016-07-01 00:15:00,3,4\n");
        let frame = load_csv(f.path(), "date").unwrap();
        assert_eq!(frame.variates(), 2);
        assert_eq!(frame.freq(), TimeDelta::minutes(15));
        assert_eq!(frame.values()[1], vec![2.0, 4.0]);
    }

    #[test]
    fn gap_is_reported_at_its_row() {
        let f = write(
            "date,x\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,2\n2016-07-01 03:00:00,3\n2016-07-01 04:00:00,4\n",
        );
        match load_csv(f.path(), "date").unwrap_err() {
            Error::Data { row, message, .. } => {
                assert_eq!(row, 4);
                assert!(message.contains("irregular"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_number_names_row_and_column() {
        let f = write("date,x,y\n2016-07-01 00:00:00,1,2\n2016-07-01 01:00:00,2,abc\n");
        let msg = load_csv(f.path(), "date").unwrap_err().to_string();
        assert!(msg.contains("row 3") && msg.contains("`y`"), "{msg}");
    }

    #[test]
    fn non_finite_rows_are_rejected() {
        let f = write("date,x\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,NaN\n");
        assert!(load_csv(f.path(), "date").is_err());
    }
}
