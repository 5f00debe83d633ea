//! CSV matrices: one header row of component names, then one composition
//! per line.

use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use ndarray::{Array2, ArrayView2};
use tflr::composition::INGEST_TOL;
use tflr::{validate_composition, CompositionMatrix, TflrError};

/// Ingestion failure carrying the file and line it refers to.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(path: &Path, msg: impl std::fmt::Display) -> anyhow::Error {
    InputError(format!("{}: {msg}", path.display())).into()
}

/// File line of data row `row` (0-based); the header is line 1.
fn line(row: usize) -> usize {
    row + 2
}

/// Reads and validates a composition matrix.
pub fn read_composition(path: &Path) -> Result<CompositionMatrix> {
    let file = File::open(path).map_err(|e| input_error(path, format!("cannot open: {e}")))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| input_error(path, format!("line 1: unreadable header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let d = names.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| input_error(path, format!("line {}: {e}", line(row))))?;
        if rec.len() != d {
            return Err(input_error(
                path,
                format!(
                    "line {}: expected {d} fields as in the header, found {}",
                    line(row),
                    rec.len()
                ),
            ));
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                input_error(
                    path,
                    format!(
                        "line {}, column {}: `{field}` is not a number",
                        line(row),
                        col + 1
                    ),
                )
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let values = Array2::from_shape_vec((rows, d), data).expect("every row has d fields");
    let m =
        validate_composition(values, INGEST_TOL).map_err(|e| input_error(path, describe(&e)))?;
    m.with_names(names).map_err(|e| input_error(path, e))
}

/// Rewrites a validation error with file line numbers.
fn describe(e: &TflrError) -> String {
    match *e {
        TflrError::NegativeEntry { row, col, value } => format!(
            "line {}, column {}: NegativeEntry: {value} is below zero",
            line(row),
            col + 1
        ),
        TflrError::NonFiniteEntry { row, col } => {
            format!("line {}, column {}: NonFiniteEntry: value is not finite", line(row), col + 1)
        }
        TflrError::RowSumViolation { row, sum, tol } => format!(
            "line {} (data row {}): RowSumViolation: entries sum to {sum}, expected 1 within {tol:e}",
            line(row),
            row + 1
        ),
        TflrError::Empty => "no data rows after the header".to_string(),
        TflrError::TooFewComponents { cols } => {
            format!("TooFewComponents: need at least 2 columns, found {cols}")
        }
        ref other => other.to_string(),
    }
}

/// Writes `values` under `header` with round-trip precision.
pub fn write_matrix(path: &Path, header: &[String], values: ArrayView2<'_, f64>) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in values.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// `prefix1, prefix2, ...`
pub fn default_names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("{prefix}{j}")).collect()
}

pub fn names_or_default(m: &CompositionMatrix, prefix: &str) -> Vec<String> {
    m.names()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| default_names(prefix, m.ncols()))
}
