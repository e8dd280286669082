//! CSV ingestion, frequency conversion and stationarity transforms.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    Monthly,
    #[default]
    Quarterly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `y_t - y_{t-1}`.
    Diff,
    /// `400 (ln y_t - ln y_{t-1})`, annualised quarterly growth in percent.
    DiffLog400,
    #[default]
    None,
}

/// One column expected in the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(default)]
    pub frequency: Frequency,
    #[serde(default)]
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub frequency: Frequency,
    pub values: Vec<f64>,
}

/// Reads the named columns of a CSV file with a header row. Blank cells are allowed only
/// at the end of a column, so a quarterly series can share a file with monthly ones.
pub fn ingest_csv(path: &Path, schema: &[ColumnSpec]) -> Result<Vec<RawSeries>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_csv(&text, schema)
}

pub fn parse_csv(text: &str, schema: &[ColumnSpec]) -> Result<Vec<RawSeries>, CliError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| CliError::Data(format!("unreadable header: {e}")))?.clone();
    let index: Vec<usize> = schema
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h.trim() == c.name)
                .ok_or_else(|| CliError::Data(format!("missing column '{}'", c.name)))
        })
        .collect::<Result<_, _>>()?;
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); schema.len()];
    for (r, record) in reader.records().enumerate() {
        // data rows are numbered from 1, the header being row 0
        let row = r + 1;
        let record = record.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        for (k, &c) in index.iter().enumerate() {
            let cell = record.get(c).unwrap_or("").trim();
            let value = if cell.is_empty() {
                None
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| CliError::Data(format!("row {row}, column {} ('{}'): '{cell}' is not a number", c + 1, schema[k].name)))?;
                if !v.is_finite() {
                    return Err(CliError::Data(format!("row {row}, column {} ('{}'): non-finite value", c + 1, schema[k].name)));
                }
                Some(v)
            };
            columns[k].push(value);
        }
    }
    if columns.first().is_none_or(Vec::is_empty) {
        return Err(CliError::Data("no data rows".into()));
    }
    schema
        .iter()
        .zip(columns)
        .map(|(spec, cells)| {
            let len = cells.iter().rposition(Option::is_some).map_or(0, |i| i + 1);
            let values = cells[..len]
                .iter()
                .enumerate()
                .map(|(i, v)| v.ok_or_else(|| CliError::Data(format!("row {}, column '{}': gap inside the series", i + 1, spec.name))))
                .collect::<Result<Vec<f64>, _>>()?;
            if values.is_empty() {
                return Err(CliError::Data(format!("column '{}' has no values", spec.name)));
            }
            Ok(RawSeries { name: spec.name.clone(), frequency: spec.frequency, values })
        })
        .collect()
}

pub fn transform_series(values: &[f64], kind: Transform) -> Result<Vec<f64>, CliError> {
    match kind {
        Transform::None => Ok(values.to_vec()),
        Transform::Diff | Transform::DiffLog400 if values.len() < 2 => {
            Err(CliError::Data(format!("differencing needs at least 2 values, have {}", values.len())))
        }
        Transform::Diff => Ok(values.windows(2).map(|w| w[1] - w[0]).collect()),
        Transform::DiffLog400 => {
            if let Some(i) = values.iter().position(|v| *v <= 0.0) {
                return Err(CliError::Data(format!("log transform needs positive values; value {i} is {}", values[i])));
            }
            Ok(values.windows(2).map(|w| 400.0 * (w[1].ln() - w[0].ln())).collect())
        }
    }
}

/// Quarterly averages of consecutive month triples and the number of trailing months
/// that did not fill a quarter.
pub fn monthly_to_quarterly(values: &[f64]) -> Result<(Vec<f64>, usize), CliError> {
    if values.len() < 3 {
        return Err(CliError::Data(format!("need at least 3 monthly values, have {}", values.len())));
    }
    let quarters = values.chunks_exact(3).map(|q| q.iter().sum::<f64>() / 3.0).collect();
    Ok((quarters, values.len() % 3))
}

/// Model-ready observations and notes about dropped months.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub y: DMatrix<f64>,
    pub names: Vec<String>,
    pub warnings: Vec<String>,
}

/// Aggregates monthly series to quarters, applies each transform, then keeps the last
/// common stretch of all series.
pub fn prepare(raw: &[RawSeries], schema: &[ColumnSpec]) -> Result<PreparedData, CliError> {
    let mut warnings = Vec::new();
    let mut series = Vec::with_capacity(raw.len());
    for (r, spec) in raw.iter().zip(schema) {
        let quarterly = match r.frequency {
            Frequency::Quarterly => r.values.clone(),
            Frequency::Monthly => {
                let (q, dropped) = monthly_to_quarterly(&r.values)?;
                if dropped > 0 {
                    warnings.push(format!("{}: dropped {dropped} trailing month(s) of an incomplete quarter", r.name));
                }
                q
            }
        };
        series.push(transform_series(&quarterly, spec.transform)?);
    }
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    if len == 0 {
        return Err(CliError::Data("no observations left after transforms".into()));
    }
    let y = DMatrix::from_fn(len, series.len(), |t, j| {
        let s = &series[j];
        s[s.len() - len + t]
    });
    Ok(PreparedData { y, names: raw.iter().map(|r| r.name.clone()).collect(), warnings })
}
