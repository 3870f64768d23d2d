//! CSV loading and the preprocessing pipeline for paired daily
//! driver/response series: rain/snow separation at a temperature threshold,
//! `log(Q + 1)` flow transform, leap-day removal, and day-of-year
//! demeaning into anomaly panels.
//!
//! Years must be complete. Partial years are rejected rather than imputed,
//! because a missing day would silently shift every day-of-year mean.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use crate::core::{CoreError, PanelKind, PanelSpec, SeriesPanel};

pub const DAYS_PER_YEAR: usize = 365;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column \"{0}\"")]
    MissingColumn(String),
    #[error("unparseable field \"{column}\" in data row(s) {rows:?}")]
    BadField { column: String, rows: Vec<usize> },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("dates not strictly increasing at row {0}")]
    DatesNotIncreasing(usize),
    #[error("negative {what} at row {row}")]
    NegativeValue { what: &'static str, row: usize },
    #[error("incomplete years (year: day count): {0:?}")]
    IncompleteYears(Vec<(i32, usize)>),
    #[error("flow column required but absent")]
    FlowRequired,
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// One day of raw input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub date: NaiveDate,
    pub precipitation: f64,
    pub temperature: f64,
    pub flow: Option<f64>,
}

/// Column names for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub date: String,
    pub precipitation: String,
    pub temperature: String,
    pub flow: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            date: "date".into(),
            precipitation: "precip_mm".into(),
            temperature: "temp_c".into(),
            flow: Some("flow_mm".into()),
        }
    }
}

/// Loads daily records, checking column presence, parseability, date order
/// and sign constraints. Leap days are kept here and stripped later.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<RawRecord>, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let date_col = col(&schema.date)?;
    let precip_col = col(&schema.precipitation)?;
    let temp_col = col(&schema.temperature)?;
    let flow_col = match &schema.flow {
        Some(name) => Some(col(name)?),
        None => None,
    };

    let mut records = Vec::new();
    let mut bad: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let data_row = i + 1; // 1-based data rows, header excluded
        let date = NaiveDate::parse_from_str(&row[date_col], "%Y-%m-%d");
        let precip = row[precip_col].trim().parse::<f64>();
        let temp = row[temp_col].trim().parse::<f64>();
        let flow = flow_col.map(|c| row[c].trim().parse::<f64>());
        let mut row_ok = true;
        if date.is_err() {
            bad.entry(schema.date.clone()).or_default().push(data_row);
            row_ok = false;
        }
        if precip.is_err() {
            bad.entry(schema.precipitation.clone()).or_default().push(data_row);
            row_ok = false;
        }
        if temp.is_err() {
            bad.entry(schema.temperature.clone()).or_default().push(data_row);
            row_ok = false;
        }
        if let Some(Err(_)) = &flow {
            bad.entry(schema.flow.clone().unwrap()).or_default().push(data_row);
            row_ok = false;
        }
        if !row_ok {
            continue;
        }
        records.push(RawRecord {
            date: date.unwrap(),
            precipitation: precip.unwrap(),
            temperature: temp.unwrap(),
            flow: flow.map(|f| f.unwrap()),
        });
    }
    if let Some((column, rows)) = bad.into_iter().next() {
        return Err(IngestError::BadField { column, rows });
    }
    for (i, pair) in records.windows(2).enumerate() {
        if pair[1].date == pair[0].date {
            return Err(IngestError::DuplicateDate(pair[1].date));
        }
        if pair[1].date < pair[0].date {
            return Err(IngestError::DatesNotIncreasing(i + 2));
        }
    }
    for (i, r) in records.iter().enumerate() {
        if r.precipitation < 0.0 {
            return Err(IngestError::NegativeValue { what: "precipitation", row: i + 1 });
        }
        if let Some(f) = r.flow {
            if f < 0.0 {
                return Err(IngestError::NegativeValue { what: "flow", row: i + 1 });
            }
        }
    }
    Ok(records)
}

/// Precipitation counts as rain only strictly above the threshold; a day
/// exactly at the threshold is snow.
pub fn split_rain_snow(records: &[RawRecord], threshold_celsius: f64) -> Vec<f64> {
    records
        .iter()
        .map(|r| {
            if r.temperature > threshold_celsius {
                r.precipitation
            } else {
                0.0
            }
        })
        .collect()
}

/// Natural log of `Q + 1`.
pub fn log_transform_flow(flow: &[f64]) -> Result<Vec<f64>, IngestError> {
    flow.iter()
        .enumerate()
        .map(|(i, &q)| {
            if q < 0.0 {
                Err(IngestError::NegativeValue { what: "flow", row: i + 1 })
            } else {
                Ok((q + 1.0).ln())
            }
        })
        .collect()
}

/// Drops Feb 29 rows and checks that every year contributes exactly 365
/// days afterwards.
pub fn remove_leap_days(records: &[RawRecord]) -> Result<Vec<RawRecord>, IngestError> {
    let kept: Vec<RawRecord> = records
        .iter()
        .filter(|r| !(r.date.month() == 2 && r.date.day() == 29))
        .copied()
        .collect();
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for r in &kept {
        *counts.entry(r.date.year()).or_default() += 1;
    }
    let bad: Vec<(i32, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c != DAYS_PER_YEAR)
        .collect();
    if !bad.is_empty() {
        return Err(IngestError::IncompleteYears(bad));
    }
    Ok(kept)
}

/// Removes the day-of-year mean from a raw panel. Returns the anomaly
/// panel and the removed means (length `T`).
pub fn seasonal_demean(panel: &SeriesPanel) -> (SeriesPanel, Vec<f64>) {
    let t_len = panel.spec.period_length;
    let n = panel.spec.replicate_count;
    let mut means = vec![0.0; t_len];
    for i in 0..n {
        for (t, m) in means.iter_mut().enumerate() {
            *m += panel.values[i * t_len + t];
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    let values: Vec<f64> = panel
        .values
        .iter()
        .enumerate()
        .map(|(idx, v)| v - means[idx % t_len])
        .collect();
    (
        SeriesPanel {
            spec: panel.spec,
            values,
            kind: PanelKind::Anomaly,
        },
        means,
    )
}

/// Assembles a values sequence of whole years into a raw panel.
pub fn panel_from_series(
    values: Vec<f64>,
    max_lag_count: usize,
    period_length: usize,
) -> Result<SeriesPanel, IngestError> {
    if values.len() % period_length != 0 {
        return Err(CoreError::LengthMismatch {
            expected: (values.len() / period_length + 1) * period_length,
            actual: values.len(),
        }
        .into());
    }
    let spec = PanelSpec::new(period_length, max_lag_count, values.len() / period_length)?;
    Ok(SeriesPanel::new(spec, values, PanelKind::Raw)?)
}
