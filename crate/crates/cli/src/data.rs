//! CSV ingestion with missing-value and constant-column screening.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use tracefda::moments::qn_scale;
use tracefda::LabeledDataset;

use crate::error::{CliError, CliResult};

const MISSING: [&str; 4] = ["", "NA", "NaN", "?"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetReport {
    pub rows_read: usize,
    /// 1-based data row numbers (header excluded).
    pub dropped_rows: Vec<usize>,
    pub dropped_columns: Vec<String>,
    pub kept_columns: Vec<String>,
    /// Original label strings, indexed by group number.
    pub classes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: LabeledDataset,
    pub report: DatasetReport,
}

fn is_missing(cell: &str) -> bool {
    MISSING.iter().any(|m| m.eq_ignore_ascii_case(cell.trim()))
}

/// Reads a headed CSV file; `label_column` is a header name or a 0-based index.
pub fn load_csv(path: &Path, label_column: &str) -> CliResult<LoadedData> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_csv(file, label_column)
}

pub fn read_csv<R: std::io::Read>(input: R, label_column: &str) -> CliResult<LoadedData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::validation(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() {
        return Err(CliError::validation("header row is empty"));
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .or_else(|| {
            label_column
                .parse::<usize>()
                .ok()
                .filter(|&i| i < headers.len())
        })
        .ok_or_else(|| CliError::validation(format!("label column {label_column:?} not found")))?;
    let features: Vec<usize> = (0..headers.len()).filter(|&c| c != label_idx).collect();
    if features.is_empty() {
        return Err(CliError::validation("no feature columns"));
    }

    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut dropped_rows = Vec::new();
    let mut rows_read = 0;
    for (i, rec) in reader.records().enumerate() {
        let row_no = i + 1;
        let rec = rec.map_err(|e| CliError::validation(format!("row {row_no}: {e}")))?;
        rows_read += 1;
        if rec.len() != headers.len() {
            return Err(CliError::validation(format!(
                "row {row_no}: expected {} fields, found {}",
                headers.len(),
                rec.len()
            )));
        }
        if rec.iter().any(is_missing) {
            dropped_rows.push(row_no);
            continue;
        }
        let mut row = Vec::with_capacity(features.len());
        for &c in &features {
            let cell = &rec[c];
            let v: f64 = cell.parse().map_err(|_| {
                CliError::validation(format!(
                    "row {row_no}, column {:?}: cannot parse {cell:?}",
                    headers[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::validation(format!(
                    "row {row_no}, column {:?}: non-finite value",
                    headers[c]
                )));
            }
            row.push(v);
        }
        values.push(row);
        raw_labels.push(rec[label_idx].to_string());
    }
    if !dropped_rows.is_empty() {
        log::info!("dropped {} rows with missing values", dropped_rows.len());
    }

    let mut classes: Vec<String> = raw_labels.clone();
    classes.sort();
    classes.dedup();
    let numeric: Option<Vec<f64>> = classes.iter().map(|c| c.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(classes).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        classes = pairs.into_iter().map(|p| p.1).collect();
    }
    if classes.len() < 2 {
        return Err(CliError::validation(format!(
            "need at least 2 classes, found {}",
            classes.len()
        )));
    }

    let mut kept = Vec::new();
    let mut dropped_columns = Vec::new();
    for (fi, &c) in features.iter().enumerate() {
        let col: Vec<f64> = values.iter().map(|r| r[fi]).collect();
        let keep = col.len() >= 2 && qn_scale(&col).map(|s| s > 0.0).unwrap_or(false);
        if keep {
            kept.push(fi);
        } else {
            dropped_columns.push(headers[c].clone());
        }
    }
    if !dropped_columns.is_empty() {
        log::info!("dropped columns with zero Qn scale: {dropped_columns:?}");
    }
    if kept.is_empty() {
        return Err(CliError::validation(
            "every feature column has zero Qn scale",
        ));
    }

    let n = values.len();
    let x = DMatrix::from_fn(n, kept.len(), |i, j| values[i][kept[j]]);
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .expect("label is a class")
        })
        .collect();
    let dataset = LabeledDataset::with_groups(x, labels, classes.len())?;
    Ok(LoadedData {
        dataset,
        report: DatasetReport {
            rows_read,
            dropped_rows,
            dropped_columns,
            kept_columns: kept
                .iter()
                .map(|&fi| headers[features[fi]].clone())
                .collect(),
            classes,
        },
    })
}
