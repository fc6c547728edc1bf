use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{DataError, FeatureSchema};

/// Longest run of missing hours that is filled by linear interpolation.
pub const MAX_INTERPOLATED_GAP_HOURS: usize = 6;

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .or_else(|| {
            chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Contiguous hourly multivariate record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesFrame {
    start: NaiveDateTime,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl TimeSeriesFrame {
    pub fn new(
        start: NaiveDateTime,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        if names.len() != columns.len() {
            return Err(DataError::Schema(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if let Some(first) = columns.first() {
            if let Some((i, _)) = columns.iter().enumerate().find(|(_, c)| c.len() != first.len()) {
                return Err(DataError::Schema(format!(
                    "column {} has length {}, expected {}",
                    names[i],
                    columns[i].len(),
                    first.len()
                )));
            }
        }
        Ok(Self {
            start,
            names,
            columns,
        })
    }

    /// Empty frame with the schema's columns, starting at `start`.
    pub fn with_schema(start: NaiveDateTime, schema: &FeatureSchema) -> Self {
        Self {
            start,
            names: schema.names().iter().map(|s| s.to_string()).collect(),
            columns: vec![Vec::new(); schema.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    /// Timestamp of the last record (equal to `start` when empty).
    pub fn end(&self) -> NaiveDateTime {
        self.timestamp(self.len().saturating_sub(1))
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.start + Duration::hours(index as i64)
    }

    pub fn index_of(&self, t: NaiveDateTime) -> Option<usize> {
        let delta = t - self.start;
        if delta < Duration::zero() || delta.num_seconds() % 3600 != 0 {
            return None;
        }
        let idx = delta.num_hours() as usize;
        (idx < self.len()).then_some(idx)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, feature: usize) -> &[f64] {
        &self.columns[feature]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn value(&self, feature: usize, index: usize) -> f64 {
        self.columns[feature][index]
    }

    pub(crate) fn columns_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.columns
    }

    /// Appends one record at the next hour.
    pub fn push_row(&mut self, row: &[f64]) -> Result<(), DataError> {
        if row.len() != self.columns.len() {
            return Err(DataError::Schema(format!(
                "row has {} values, frame has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        for (c, v) in self.columns.iter_mut().zip(row) {
            c.push(*v);
        }
        Ok(())
    }

    /// Records with index in `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> Self {
        let to = to.min(self.len());
        let from = from.min(to);
        Self {
            start: self.timestamp(from),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[from..to].to_vec()).collect(),
        }
    }

    /// Records with timestamp in `[from, to)`; either bound may be open.
    pub fn between(&self, from: Option<NaiveDateTime>, to: Option<NaiveDateTime>) -> Self {
        let hours = |t: NaiveDateTime| (t - self.start).num_hours().clamp(0, self.len() as i64) as usize;
        let a = from.map_or(0, hours);
        let b = to.map_or(self.len(), hours);
        self.slice(a, b.max(a))
    }

    /// Checks that the columns match `schema` by name and order.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<(), DataError> {
        let expected = schema.names();
        if self.names.len() != expected.len() || self.names.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(DataError::Schema(format!(
                "frame columns {:?} do not match schema {:?}",
                self.names, expected
            )));
        }
        Ok(())
    }
}

/// Chronological train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: TimeSeriesFrame,
    pub test: TimeSeriesFrame,
    pub boundary: NaiveDateTime,
}

/// Train holds every record before `boundary`, test every record at or after it.
pub fn split_by_date(frame: &TimeSeriesFrame, boundary: NaiveDateTime) -> Result<DatasetSplit, DataError> {
    if frame.is_empty() || boundary <= frame.start() || boundary > frame.end() {
        return Err(DataError::Range(format!(
            "split boundary {} not strictly inside frame span {}..={}",
            format_timestamp(boundary),
            format_timestamp(frame.start()),
            format_timestamp(frame.end())
        )));
    }
    let hours = boundary - frame.start();
    // ceil to the next whole hour so train stays strictly before the boundary
    let cut = ((hours.num_seconds() + 3599) / 3600) as usize;
    Ok(DatasetSplit {
        train: frame.slice(0, cut),
        test: frame.slice(cut, frame.len()),
        boundary,
    })
}

/// Reads an hourly station CSV with a `timestamp` column plus one column per
/// schema feature. Columns are reordered to the schema; extra columns are
/// ignored. Missing hours and empty/NaN cells are linearly interpolated when
/// the run is at most [`MAX_INTERPOLATED_GAP_HOURS`] long.
pub fn load_frame(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<TimeSeriesFrame, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_frame(file, schema)
}

/// Writes `frame` as `timestamp,<feature>...` CSV, the layout [`read_frame`]
/// accepts.
pub fn write_frame<W: std::io::Write>(frame: &TimeSeriesFrame, writer: W) -> Result<(), DataError> {
    let csv_err = |e: csv::Error| DataError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(frame.names().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..frame.len() {
        row.clear();
        row.push(format_timestamp(frame.timestamp(i)));
        row.extend((0..frame.num_features()).map(|f| frame.value(f, i).to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

pub fn read_frame<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<TimeSeriesFrame, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let ts_col = find("timestamp").ok_or_else(|| DataError::MissingColumn("timestamp".into()))?;
    let mut cols = Vec::with_capacity(schema.len());
    for name in schema.names() {
        cols.push(find(name).ok_or_else(|| DataError::MissingColumn(name.to_string()))?);
    }

    let mut start: Option<NaiveDateTime> = None;
    let mut previous: Option<NaiveDateTime> = None;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        let line = row_idx + 2;
        let raw_ts = record.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(raw_ts).ok_or_else(|| DataError::Parse {
            line,
            column: "timestamp".into(),
            value: raw_ts.to_string(),
        })?;
        if let Some(prev) = previous {
            let step = ts - prev;
            if step <= Duration::zero() {
                return Err(DataError::Ordering {
                    line,
                    previous: format_timestamp(prev),
                    current: format_timestamp(ts),
                });
            }
            if step.num_seconds() % 3600 != 0 {
                return Err(DataError::Ordering {
                    line,
                    previous: format_timestamp(prev),
                    current: format_timestamp(ts),
                });
            }
            let missing = step.num_hours() as usize - 1;
            if missing > MAX_INTERPOLATED_GAP_HOURS {
                return Err(DataError::Gap {
                    from: format_timestamp(prev),
                    to: format_timestamp(ts),
                    missing_hours: missing,
                });
            }
            if missing > 0 {
                log::info!(
                    "interpolating {missing} missing hour(s) between {} and {}",
                    format_timestamp(prev),
                    format_timestamp(ts)
                );
                for col in columns.iter_mut() {
                    col.extend(std::iter::repeat_n(f64::NAN, missing));
                }
            }
        } else {
            start = Some(ts);
        }
        previous = Some(ts);
        for (f, &c) in cols.iter().enumerate() {
            let raw = record.get(c).unwrap_or("");
            let v = if raw.is_empty() || raw.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                raw.parse::<f64>().map_err(|_| DataError::Parse {
                    line,
                    column: schema.names()[f].to_string(),
                    value: raw.to_string(),
                })?
            };
            if v.is_infinite() {
                return Err(DataError::Parse {
                    line,
                    column: schema.names()[f].to_string(),
                    value: raw.to_string(),
                });
            }
            columns[f].push(v);
        }
    }
    let start = start.ok_or_else(|| DataError::Csv("no data rows".into()))?;
    for (f, col) in columns.iter_mut().enumerate() {
        fill_gaps(col, start, schema.names()[f])?;
    }
    TimeSeriesFrame::new(
        start,
        schema.names().iter().map(|s| s.to_string()).collect(),
        columns,
    )
}

fn fill_gaps(col: &mut [f64], start: NaiveDateTime, name: &str) -> Result<(), DataError> {
    let at = |i: usize| format_timestamp(start + Duration::hours(i as i64));
    let mut i = 0;
    while i < col.len() {
        if !col[i].is_nan() {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < col.len() && col[i].is_nan() {
            i += 1;
        }
        let run = i - run_start;
        if run_start == 0 || i == col.len() || run > MAX_INTERPOLATED_GAP_HOURS {
            return Err(DataError::Gap {
                from: at(run_start.saturating_sub(1)),
                to: at(i.min(col.len() - 1)),
                missing_hours: run,
            });
        }
        let (lo, hi) = (col[run_start - 1], col[i]);
        for j in 0..run {
            let frac = (j + 1) as f64 / (run + 1) as f64;
            col[run_start + j] = lo + (hi - lo) * frac;
        }
        if run > 0 {
            log::debug!("{name}: interpolated {run} value(s) from {}", at(run_start));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        let s = FeatureSchema::miami_river();
        format!("timestamp,{}\n", s.names().join(","))
    }

    fn row(ts: &str, v: f64) -> String {
        let vals: Vec<String> = (0..11).map(|i| format!("{}", v + i as f64)).collect();
        format!("{ts},{}\n", vals.join(","))
    }

    fn read(csv: &str) -> Result<TimeSeriesFrame, DataError> {
        read_frame(csv.as_bytes(), &FeatureSchema::miami_river())
    }

    #[test]
    fn well_formed_passthrough() {
        let csv = header()
            + &row("2010-01-01 00:00", 1.0)
            + &row("2010-01-01 01:00", 2.0)
            + &row("2010-01-01 02:00", 3.0);
        let f = read(&csv).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.column_by_name("Pump_S26").unwrap(), &[2.0, 3.0, 4.0]);
        assert_eq!(f.end(), parse_timestamp("2010-01-01T02:00:00").unwrap());
    }

    #[test]
    fn write_then_read_round_trips() {
        let csv = header() + &row("2010-01-01 00:00", 0.1) + &row("2010-01-01 01:00", -2.75);
        let f = read(&csv).unwrap();
        let mut buf = Vec::new();
        write_frame(&f, &mut buf).unwrap();
        assert_eq!(read_frame(buf.as_slice(), &FeatureSchema::miami_river()).unwrap(), f);
    }

    #[test]
    fn one_missing_hour_is_interpolated() {
        let csv = header() + &row("2010-01-01T00:00:00", 1.0) + &row("2010-01-01T02:00:00", 3.0);
        let f = read(&csv).unwrap();
        assert_eq!(f.len(), 3);
        // midpoint of the two neighbours
        assert_eq!(f.column(0), &[1.0, 2.0, 3.0]);
        assert_eq!(f.column(10), &[11.0, 12.0, 13.0]);
    }

    #[test]
    fn reordered_and_extra_columns() {
        let s = FeatureSchema::miami_river();
        let mut names: Vec<&str> = s.names();
        names.reverse();
        let mut csv = format!("extra,{},timestamp\n", names.join(","));
        for h in 0..2 {
            let vals: Vec<String> = (0..11).rev().map(|i| format!("{}", i * 10 + h)).collect();
            csv += &format!("99,{},2010-01-01 0{h}:00\n", vals.join(","));
        }
        let f = read(&csv).unwrap();
        assert_eq!(f.column(0), &[0.0, 1.0]);
        assert_eq!(f.column(10), &[100.0, 101.0]);
    }

    #[test]
    fn missing_column_named() {
        let csv = header().replace(",Grid_Rainfall", "") + "2010-01-01 00:00,1,2,3,4,5,6,7,8,9,10\n";
        match read(&csv) {
            Err(DataError::MissingColumn(c)) => assert_eq!(c, "Grid_Rainfall"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_monotone_rejected() {
        let csv = header() + &row("2010-01-01 02:00", 1.0) + &row("2010-01-01 01:00", 1.0);
        assert!(matches!(read(&csv), Err(DataError::Ordering { .. })));
        let dup = header() + &row("2010-01-01 02:00", 1.0) + &row("2010-01-01 02:00", 1.0);
        assert!(matches!(read(&dup), Err(DataError::Ordering { .. })));
    }

    #[test]
    fn long_gap_rejected_with_range() {
        let csv = header() + &row("2010-01-01 00:00", 1.0) + &row("2010-01-01 08:00", 1.0);
        match read(&csv) {
            Err(DataError::Gap { missing_hours, from, to }) => {
                assert_eq!(missing_hours, 7);
                assert_eq!(from, "2010-01-01T00:00:00");
                assert_eq!(to, "2010-01-01T08:00:00");
            }
            other => panic!("{other:?}"),
        }
        let ok = header() + &row("2010-01-01 00:00", 1.0) + &row("2010-01-01 07:00", 8.0);
        let f = read(&ok).unwrap();
        assert_eq!(f.len(), 8);
        assert_eq!(f.column(0)[3], 4.0);
    }

    #[test]
    fn empty_cells_interpolated() {
        let csv = header()
            + &row("2010-01-01 00:00", 1.0)
            + "2010-01-01 01:00,,2,3,4,5,6,7,8,9,10,\n"
            + &row("2010-01-01 02:00", 5.0);
        let f = read(&csv).unwrap();
        assert_eq!(f.column(0), &[1.0, 3.0, 5.0]);
        assert_eq!(f.column(10)[1], 13.0);
    }

    fn hourly(len: usize) -> TimeSeriesFrame {
        let start = parse_timestamp("2010-01-01 00:00").unwrap();
        TimeSeriesFrame::new(start, vec!["x".into()], vec![(0..len).map(|i| i as f64).collect()]).unwrap()
    }

    #[test]
    fn split_boundary_cases() {
        let f = hourly(48);
        let b = parse_timestamp("2010-01-01 01:00").unwrap();
        let s = split_by_date(&f, b).unwrap();
        assert_eq!(s.train.len(), 1);
        assert_eq!(s.test.start(), b);
        assert!(split_by_date(&f, parse_timestamp("2009-12-31 00:00").unwrap()).is_err());
        assert!(split_by_date(&f, f.start()).is_err());
        assert!(split_by_date(&f, f.end() + Duration::hours(1)).is_err());
    }

    #[test]
    fn split_matches_published_dates() {
        let start = parse_timestamp("2010-01-01 00:00").unwrap();
        let end = parse_timestamp("2020-12-31 23:00").unwrap();
        let len = (end - start).num_hours() as usize + 1;
        let f = TimeSeriesFrame::new(start, vec!["x".into()], vec![vec![0.0; len]]).unwrap();
        let s = split_by_date(&f, parse_timestamp("2018-08-08 00:00").unwrap()).unwrap();
        assert_eq!(s.train.end(), parse_timestamp("2018-08-07 23:00").unwrap());
        assert_eq!(s.test.start(), parse_timestamp("2018-08-08 00:00").unwrap());
        assert_eq!(s.train.len() + s.test.len(), len);
    }
}
