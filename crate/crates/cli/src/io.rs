use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use gmcm::{DataMatrix, Role};
use serde::Serialize;

/// Bad flags or unreadable input. Maps to exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

/// Reads a headed numeric CSV into a raw-data matrix.
pub fn read_matrix(path: &Path) -> Result<DataMatrix> {
    let file = File::open(path).map_err(|e| input_error(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let width = reader
        .headers()
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?
        .len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        // csv reports ragged rows as errors
        let record = record.map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                input_error(format!("{}: row {}, column {}: {field:?} is not a number", path.display(), i + 1, j + 1))
            })?;
            if !v.is_finite() {
                return Err(input_error(format!(
                    "{}: row {}, column {}: non-finite value",
                    path.display(),
                    i + 1,
                    j + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(input_error(format!("{}: no data rows", path.display())));
    }
    DataMatrix::from_vec(rows, width, values, Role::Raw).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

/// Writes `x1..xp` headed rows. `f64` display is the shortest string that
/// parses back to the same value.
pub fn write_matrix(path: &Path, data: &DataMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record((1..=data.ncols()).map(|j| format!("x{j}")))?;
    for row in data.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_table<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))
}
