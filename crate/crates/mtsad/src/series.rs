//! Multivariate time-series containers, labels, calendars, and CSV ingestion.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A uniformly sampled multivariate time series: `n` series by `T` steps.
///
/// Values are stored row-major as an `n x T` matrix. Timestamps are implied
/// by `start_time` and `sample_interval` and are strictly increasing.
/// Instances are immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Mts {
    values: Array2<f64>,
    start_time: NaiveDateTime,
    sample_interval: Duration,
    series_names: Vec<String>,
}

impl Mts {
    /// Builds an [`Mts`], validating the container invariants: at least two
    /// series, at least one step, all values finite, a positive interval,
    /// and one name per series.
    pub fn new(
        values: Array2<f64>,
        start_time: NaiveDateTime,
        sample_interval: Duration,
        series_names: Vec<String>,
    ) -> Result<Self> {
        let (n, t_len) = values.dim();
        if n < 2 {
            return Err(Error::Argument(format!("need at least 2 series, got {n}")));
        }
        if t_len < 1 {
            return Err(Error::Argument("need at least 1 time step".into()));
        }
        if sample_interval <= Duration::zero() {
            return Err(Error::Argument("sample interval must be positive".into()));
        }
        if series_names.len() != n {
            return Err(Error::Argument(format!(
                "{} series names for {} series",
                series_names.len(),
                n
            )));
        }
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite value {v} in series {i} at step {j}"
            )));
        }
        Ok(Self {
            values,
            start_time,
            sample_interval,
            series_names,
        })
    }

    /// Number of series.
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of time steps.
    pub fn t_len(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.start_time
    }

    pub fn sample_interval(&self) -> Duration {
        self.sample_interval
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    /// Timestamp of step `index`.
    pub fn timestamp_at(&self, index: usize) -> NaiveDateTime {
        self.start_time + self.sample_interval * index as i32
    }

    /// Splits into train and test halves at `floor(fraction * T)`, re-basing
    /// label windows into each half. Windows straddling the boundary are
    /// truncated into both halves so no labelled point is lost.
    pub fn split(
        &self,
        labels: &[AnomalyWindow],
        fraction: f64,
    ) -> Result<(Mts, Mts, Vec<AnomalyWindow>, Vec<AnomalyWindow>)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Argument(format!(
                "split fraction must be in (0,1), got {fraction}"
            )));
        }
        let t_len = self.t_len();
        let boundary = (fraction * t_len as f64).floor() as usize;
        if boundary == 0 || boundary >= t_len {
            return Err(Error::Argument(format!(
                "split at {boundary} of {t_len} leaves an empty half"
            )));
        }
        let train = Mts {
            values: self.values.slice(ndarray::s![.., ..boundary]).to_owned(),
            start_time: self.start_time,
            sample_interval: self.sample_interval,
            series_names: self.series_names.clone(),
        };
        let test = Mts {
            values: self.values.slice(ndarray::s![.., boundary..]).to_owned(),
            start_time: self.timestamp_at(boundary),
            sample_interval: self.sample_interval,
            series_names: self.series_names.clone(),
        };
        let mut train_labels = Vec::new();
        let mut test_labels = Vec::new();
        for w in labels {
            if w.start < boundary {
                train_labels.push(AnomalyWindow {
                    start: w.start,
                    end: w.end.min(boundary - 1),
                    root_causes: w.root_causes.clone(),
                });
            }
            if w.end >= boundary {
                test_labels.push(AnomalyWindow {
                    start: w.start.max(boundary) - boundary,
                    end: w.end - boundary,
                    root_causes: w.root_causes.clone(),
                });
            }
        }
        Ok((train, test, train_labels, test_labels))
    }
}

/// A labelled anomalous span `[start, end]` (inclusive, in step indices)
/// with the set of series known to cause it (empty when unknown).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyWindow {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub root_causes: BTreeSet<usize>,
}

impl AnomalyWindow {
    pub fn new(start: usize, end: usize, root_causes: BTreeSet<usize>) -> Self {
        Self {
            start,
            end,
            root_causes,
        }
    }

    /// Checks the window against the owning series' dimensions.
    pub fn validate(&self, t_len: usize, n: usize) -> Result<()> {
        if self.start > self.end || self.end >= t_len {
            return Err(Error::Argument(format!(
                "window [{}, {}] out of range for T={}",
                self.start, self.end, t_len
            )));
        }
        if let Some(&c) = self.root_causes.iter().find(|&&c| c >= n) {
            return Err(Error::Argument(format!(
                "root cause index {c} out of range for n={n}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        index >= self.start && index <= self.end
    }
}

/// Marks exceptional steps (holidays) at raw-sample resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HolidayCalendar {
    flagged: Vec<bool>,
}

impl HolidayCalendar {
    pub fn new(flagged: Vec<bool>) -> Self {
        Self { flagged }
    }

    /// All-clear calendar of length `t_len`.
    pub fn none(t_len: usize) -> Self {
        Self {
            flagged: vec![false; t_len],
        }
    }

    pub fn len(&self) -> usize {
        self.flagged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn is_flagged(&self, index: usize) -> bool {
        self.flagged.get(index).copied().unwrap_or(false)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flagged
    }

    /// Splits the calendar at the same boundary as [`Mts::split`].
    pub fn split(&self, fraction: f64) -> Result<(HolidayCalendar, HolidayCalendar)> {
        let boundary = (fraction * self.flagged.len() as f64).floor() as usize;
        if boundary == 0 || boundary >= self.flagged.len() {
            return Err(Error::Argument("calendar split leaves an empty half".into()));
        }
        Ok((
            HolidayCalendar::new(self.flagged[..boundary].to_vec()),
            HolidayCalendar::new(self.flagged[boundary..].to_vec()),
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct CalendarFile {
    t_len: usize,
    flagged_indices: Vec<usize>,
}

impl HolidayCalendar {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = CalendarFile {
            t_len: self.flagged.len(),
            flagged_indices: self
                .flagged
                .iter()
                .enumerate()
                .filter(|(_, &f)| f)
                .map(|(i, _)| i)
                .collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file: CalendarFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let mut flagged = vec![false; file.t_len];
        for i in file.flagged_indices {
            if i >= file.t_len {
                return Err(Error::Format(format!(
                    "flagged index {i} out of range for T={}",
                    file.t_len
                )));
            }
            flagged[i] = true;
        }
        Ok(Self { flagged })
    }
}

/// How label-file window bounds are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelBounds {
    /// Integer step indices.
    Indices,
    /// ISO-8601 timestamps resolved against the owning series.
    Timestamps,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Bound {
    Index(usize),
    Timestamp(String),
}

#[derive(Serialize, Deserialize)]
struct LabelEntry {
    start: Bound,
    end: Bound,
    #[serde(default)]
    root_causes: BTreeSet<usize>,
}

/// Reads a JSON label file (an array of `{start, end, root_causes}`).
pub fn load_labels(path: &Path, bounds: LabelBounds, mts: &Mts) -> Result<Vec<AnomalyWindow>> {
    let entries: Vec<LabelEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let resolve = |b: &Bound| -> Result<usize> {
        match (bounds, b) {
            (LabelBounds::Indices, Bound::Index(i)) => Ok(*i),
            (LabelBounds::Timestamps, Bound::Timestamp(s)) => {
                let ts = parse_timestamp(s).ok_or_else(|| {
                    Error::Format(format!("unparseable label timestamp '{s}'"))
                })?;
                let delta = ts - mts.start_time();
                let step = mts.sample_interval().num_seconds();
                let idx = delta.num_seconds() / step;
                if idx < 0 || idx as usize >= mts.t_len() {
                    return Err(Error::Format(format!("label timestamp '{s}' out of range")));
                }
                Ok(idx as usize)
            }
            _ => Err(Error::Format(
                "label bound kind does not match configured label_bounds".into(),
            )),
        }
    };
    let mut windows = Vec::with_capacity(entries.len());
    for e in &entries {
        let w = AnomalyWindow::new(resolve(&e.start)?, resolve(&e.end)?, e.root_causes.clone());
        w.validate(mts.t_len(), mts.n())?;
        windows.push(w);
    }
    Ok(windows)
}

/// Writes windows as a JSON array of index-based `{start, end, root_causes}`.
pub fn save_labels(path: &Path, windows: &[AnomalyWindow]) -> Result<()> {
    let entries: Vec<LabelEntry> = windows
        .iter()
        .map(|w| LabelEntry {
            start: Bound::Index(w.start),
            end: Bound::Index(w.end),
            root_causes: w.root_causes.clone(),
        })
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&entries)?)?;
    Ok(())
}

/// Column mapping and ingestion options for [`load_csv`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    /// Name of the timestamp column (must be the header of some column).
    pub timestamp_column: String,
    /// Value columns to ingest, in order. Empty means every non-timestamp
    /// column in header order.
    pub value_columns: Vec<String>,
    /// Largest run of missing rows to forward-fill before erroring.
    pub max_gap: usize,
    /// Standardize each series to zero mean and unit variance after filling.
    pub standardize: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp_column: "timestamp".into(),
            value_columns: Vec::new(),
            max_gap: 5,
            standardize: false,
        }
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    None
}

/// Loads a CSV with a header row, one timestamp column, and `n` numeric
/// columns into an [`Mts`]. Rows must be sorted by timestamp; gaps of up to
/// `schema.max_gap` missing rows are forward-filled and reported in the
/// returned warning list.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<(Mts, Vec<String>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let ts_col = headers
        .iter()
        .position(|h| h == schema.timestamp_column)
        .ok_or_else(|| {
            Error::Schema(format!(
                "timestamp column '{}' not found",
                schema.timestamp_column
            ))
        })?;
    let value_cols: Vec<(usize, String)> = if schema.value_columns.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ts_col)
            .map(|(i, h)| (i, h.to_string()))
            .collect()
    } else {
        schema
            .value_columns
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .map(|i| (i, name.clone()))
                    .ok_or_else(|| Error::Schema(format!("value column '{name}' not found")))
            })
            .collect::<Result<_>>()?
    };
    if value_cols.is_empty() {
        return Err(Error::Schema("no value columns".into()));
    }

    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let csv_row = row_idx + 2; // 1-based, after the header
        let ts_str = record.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(ts_str).ok_or_else(|| Error::Parse {
            row: csv_row,
            column: schema.timestamp_column.clone(),
            message: format!("unparseable timestamp '{ts_str}'"),
        })?;
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(Error::Format(format!(
                    "timestamps not strictly increasing at row {csv_row}"
                )));
            }
        }
        let mut row = Vec::with_capacity(value_cols.len());
        for (col, name) in &value_cols {
            let cell = record.get(*col).unwrap_or("");
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: csv_row,
                column: name.clone(),
                message: format!("non-numeric cell '{cell}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: csv_row,
                    column: name.clone(),
                    message: format!("non-finite cell '{cell}'"),
                });
            }
            row.push(v);
        }
        timestamps.push(ts);
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::Format("need at least 2 rows to infer sampling".into()));
    }

    // The sampling interval is the smallest consecutive delta, so a gap
    // right after the first row does not masquerade as the grid.
    let interval = timestamps
        .windows(2)
        .map(|w| w[1] - w[0])
        .min()
        .unwrap();
    if interval <= Duration::zero() {
        return Err(Error::Format("non-positive sample interval".into()));
    }
    let interval_secs = interval.num_seconds();

    // Walk the rows, forward-filling gaps that are whole multiples of the
    // inferred interval and no longer than max_gap.
    let mut warnings = Vec::new();
    let mut filled: Vec<Vec<f64>> = vec![rows[0].clone()];
    for i in 1..rows.len() {
        let delta = (timestamps[i] - timestamps[i - 1]).num_seconds();
        if delta % interval_secs != 0 {
            return Err(Error::Format(format!(
                "timestamp at data row {} is not aligned to the {}s sampling grid",
                i + 1,
                interval_secs
            )));
        }
        let missing = (delta / interval_secs - 1) as usize;
        if missing > 0 {
            if missing > schema.max_gap {
                return Err(Error::Format(format!(
                    "gap of {missing} samples before data row {} exceeds max_gap={}",
                    i + 1,
                    schema.max_gap
                )));
            }
            let fill = filled.last().unwrap().clone();
            let first_missing = filled.len();
            for _ in 0..missing {
                filled.push(fill.clone());
            }
            warnings.push(format!(
                "forward-filled {missing} missing sample(s) at index {first_missing}"
            ));
        }
        filled.push(rows[i].clone());
    }

    let n = value_cols.len();
    let t_len = filled.len();
    let mut values = Array2::zeros((n, t_len));
    for (t, row) in filled.iter().enumerate() {
        for (s, &v) in row.iter().enumerate() {
            values[[s, t]] = v;
        }
    }
    if schema.standardize {
        for mut series in values.rows_mut() {
            let mean = series.mean().unwrap_or(0.0);
            let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t_len as f64;
            let std = var.sqrt();
            if std > 0.0 {
                series.mapv_inplace(|v| (v - mean) / std);
            } else {
                series.mapv_inplace(|v| v - mean);
            }
        }
    }

    let names = value_cols.into_iter().map(|(_, name)| name).collect();
    let mts = Mts::new(values, timestamps[0], interval, names)?;
    Ok((mts, warnings))
}

/// Writes an [`Mts`] in the same CSV layout [`load_csv`] reads.
pub fn save_csv(path: &Path, mts: &Mts) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(mts.series_names().iter().cloned());
    writer.write_record(&header)?;
    for t in 0..mts.t_len() {
        let mut record = vec![mts.timestamp_at(t).format("%Y-%m-%dT%H:%M:%S").to_string()];
        for s in 0..mts.n() {
            record.push(format!("{}", mts.values()[[s, t]]));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use ndarray::array;
    use std::io::Write;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn small_mts(t_len: usize) -> Mts {
        let values = Array2::from_shape_fn((2, t_len), |(i, j)| (i * 100 + j) as f64);
        Mts::new(
            values,
            ts("2021-01-01T00:00:00"),
            Duration::minutes(1),
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    fn write_csv(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_three_column_csv() {
        let f = write_csv(&[
            "timestamp,a,b",
            "2021-01-01T00:00:00,1.0,2.0",
            "2021-01-01T00:01:00,1.1,2.1",
            "2021-01-01T00:02:00,1.2,2.2",
            "2021-01-01T00:03:00,1.3,2.3",
            "2021-01-01T00:04:00,1.4,2.4",
            "2021-01-01T00:05:00,1.5,2.5",
            "2021-01-01T00:06:00,1.6,2.6",
            "2021-01-01T00:07:00,1.7,2.7",
            "2021-01-01T00:08:00,1.8,2.8",
            "2021-01-01T00:09:00,1.9,2.9",
        ]);
        let (mts, warnings) = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(mts.n(), 2);
        assert_eq!(mts.t_len(), 10);
        assert!(warnings.is_empty());
        assert_eq!(mts.sample_interval(), Duration::minutes(1));
        assert_eq!(mts.values()[[1, 9]], 2.9);
    }

    #[test]
    fn forward_fills_single_missing_row() {
        let f = write_csv(&[
            "timestamp,a,b",
            "2021-01-01T00:00:00,1,10",
            "2021-01-01T00:01:00,2,20",
            "2021-01-01T00:02:00,3,30",
            "2021-01-01T00:03:00,4,40",
            "2021-01-01T00:04:00,5,50",
            // row for 00:05 missing
            "2021-01-01T00:06:00,7,70",
            "2021-01-01T00:07:00,8,80",
            "2021-01-01T00:08:00,9,90",
            "2021-01-01T00:09:00,10,100",
        ]);
        let (mts, warnings) = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(mts.t_len(), 10);
        assert_eq!(warnings.len(), 1);
        // index 5 carries the previous row's values
        assert_eq!(mts.values()[[0, 5]], 5.0);
        assert_eq!(mts.values()[[1, 5]], 50.0);
        assert_eq!(mts.values()[[0, 6]], 7.0);
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let f = write_csv(&[
            "timestamp,a,b",
            "2021-01-01T00:00:00,1,2",
            "2021-01-01T00:01:00,oops,3",
        ]);
        let err = load_csv(f.path(), &CsvSchema::default()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "a");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_timestamp_column_is_schema_error() {
        let f = write_csv(&["time,a,b", "2021-01-01T00:00:00,1,2"]);
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn oversized_gap_is_format_error() {
        let f = write_csv(&[
            "timestamp,a,b",
            "2021-01-01T00:00:00,1,2",
            "2021-01-01T00:01:00,3,4",
            "2021-01-01T00:10:00,5,6",
        ]);
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn split_half_and_half() {
        let mts = small_mts(100);
        let (train, test, _, _) = mts.split(&[], 0.5).unwrap();
        assert_eq!(train.t_len(), 50);
        assert_eq!(test.t_len(), 50);
        assert_eq!(test.start_time(), mts.timestamp_at(50));
    }

    #[test]
    fn split_truncates_straddling_window() {
        let mts = small_mts(100);
        let w = AnomalyWindow::new(48, 52, BTreeSet::from([0]));
        let (_, _, train_labels, test_labels) = mts.split(&[w], 0.5).unwrap();
        assert_eq!(train_labels, vec![AnomalyWindow::new(48, 49, BTreeSet::from([0]))]);
        assert_eq!(test_labels, vec![AnomalyWindow::new(0, 2, BTreeSet::from([0]))]);
    }

    #[test]
    fn split_floor_keeps_one_test_step() {
        let mts = small_mts(10);
        let (train, test, _, _) = mts.split(&[], 0.99).unwrap();
        assert_eq!(train.t_len(), 9);
        assert_eq!(test.t_len(), 1);
    }

    #[test]
    fn split_concat_roundtrip() {
        let mts = small_mts(37);
        let (train, test, _, _) = mts.split(&[], 0.4).unwrap();
        let rebuilt = ndarray::concatenate![ndarray::Axis(1), *train.values(), *test.values()];
        assert_eq!(rebuilt, *mts.values());
    }

    #[test]
    fn rebased_labels_stay_valid() {
        let mts = small_mts(60);
        let labels = vec![
            AnomalyWindow::new(0, 3, BTreeSet::new()),
            AnomalyWindow::new(29, 31, BTreeSet::from([1])),
            AnomalyWindow::new(58, 59, BTreeSet::new()),
        ];
        let (train, test, tr, te) = mts.split(&labels, 0.5).unwrap();
        for w in &tr {
            w.validate(train.t_len(), train.n()).unwrap();
        }
        for w in &te {
            w.validate(test.t_len(), test.n()).unwrap();
        }
        assert_eq!(tr.len(), 2);
        assert_eq!(te.len(), 2);
    }

    #[test]
    fn rejects_non_finite_values() {
        let values = array![[1.0, f64::NAN], [2.0, 3.0]];
        assert!(Mts::new(
            values,
            NaiveDate::from_ymd_opt(2021, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            Duration::minutes(1),
            vec!["a".into(), "b".into()],
        )
        .is_err());
    }

    #[test]
    fn labels_roundtrip_json() {
        let mts = small_mts(50);
        let windows = vec![
            AnomalyWindow::new(3, 7, BTreeSet::from([0, 1])),
            AnomalyWindow::new(20, 20, BTreeSet::new()),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.json");
        save_labels(&path, &windows).unwrap();
        let loaded = load_labels(&path, LabelBounds::Indices, &mts).unwrap();
        assert_eq!(loaded, windows);
    }

    #[test]
    fn timestamp_labels_resolve_against_series() {
        let mts = small_mts(50);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.json");
        std::fs::write(
            &path,
            r#"[{"start": "2021-01-01T00:05:00", "end": "2021-01-01T00:08:00"}]"#,
        )
        .unwrap();
        let loaded = load_labels(&path, LabelBounds::Timestamps, &mts).unwrap();
        assert_eq!(loaded, vec![AnomalyWindow::new(5, 8, BTreeSet::new())]);
    }

    #[test]
    fn csv_roundtrip() {
        let mts = small_mts(12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mts.csv");
        save_csv(&path, &mts).unwrap();
        let (loaded, warnings) = load_csv(&path, &CsvSchema::default()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(loaded, mts);
    }

    #[test]
    fn calendar_roundtrip_and_split() {
        let mut flags = vec![false; 20];
        flags[3] = true;
        flags[15] = true;
        let cal = HolidayCalendar::new(flags);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.json");
        cal.save_json(&path).unwrap();
        assert_eq!(HolidayCalendar::load_json(&path).unwrap(), cal);
        let (a, b) = cal.split(0.5).unwrap();
        assert!(a.is_flagged(3));
        assert!(b.is_flagged(5));
        assert_eq!(a.len() + b.len(), 20);
    }
}
