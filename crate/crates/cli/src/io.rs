//! CSV ingestion and JSON output.
//!
//! CSV layout: one sample per row, one component per column, with an optional
//! header of component labels. A first row is a header when any of its fields
//! does not parse as a number.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use simplex_score::model::{close_counts, validate_composition, Dataset, ModelSpec, SIMPLEX_TOL};

use crate::error::{CliError, CliResult};

/// How raw CSV values become compositions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ingest {
    Compositions,
    /// Nonnegative integer counts, closed after adding the pseudocount.
    Counts { pseudocount: f64 },
}

fn parse_row(record: &csv::StringRecord, line: usize) -> CliResult<Vec<f64>> {
    record
        .iter()
        .enumerate()
        .map(|(col, field)| {
            field.trim().parse::<f64>().map_err(|_| {
                CliError::Parse(format!("line {line}, column {}: '{field}' is not a number", col + 1))
            })
        })
        .collect()
}

fn is_header(record: &csv::StringRecord) -> bool {
    record.iter().any(|f| f.trim().parse::<f64>().is_err())
}

pub fn read_dataset(path: &Path, spec: &ModelSpec, ingest: Ingest) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let mut labels = None;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if i == 0 && is_header(&record) {
            labels = Some(record.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>());
            continue;
        }
        rows.push(parse_row(&record, i + 1)?);
    }
    if rows.is_empty() {
        return Err(CliError::Parse(format!("{}: no data rows", path.display())));
    }
    let comps = rows
        .iter()
        .map(|row| match ingest {
            Ingest::Compositions => Ok(validate_composition(row, spec, SIMPLEX_TOL)?),
            Ingest::Counts { pseudocount } => {
                let counts = row
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
                            Ok(v as u64)
                        } else {
                            Err(CliError::Parse(format!("count {v} is not a nonnegative integer")))
                        }
                    })
                    .collect::<CliResult<Vec<u64>>>()?;
                let c = close_counts(&counts, pseudocount)?;
                Ok(validate_composition(c.values(), spec, SIMPLEX_TOL)?)
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    let data = Dataset::from_compositions(comps)?;
    match labels {
        Some(l) => Ok(data.with_labels(l)?),
        None => Ok(data),
    }
}

/// Writes shortest round-trip decimal representations, so reading the file
/// back gives the same values.
pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path)?;
    if let Some(labels) = data.labels() {
        writer.write_record(labels)?;
    }
    for row in data.rows() {
        writer.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
