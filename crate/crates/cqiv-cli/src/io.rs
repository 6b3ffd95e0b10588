//! CSV ingestion and result-table output.
//!
//! Output files start with a `#`-prefixed header block recording the schema
//! version and the master seed; the readers here skip such comment lines,
//! so every table round-trips. Numbers are written with the shortest
//! representation that parses back to the identical f64.

use std::fmt::Write as _;
use std::path::Path;

use cqiv::data::Dataset;

use crate::config::{CensoringSpec, ColumnRoles};
use crate::CliError;

/// Read the observation table, mapping roles onto named columns.
pub fn read_dataset(path: &Path, roles: &ColumnRoles) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::data(format!("cannot read header of {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();

    let col_index = |name: &str| -> Result<usize, CliError> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::data(format!(
                "column {name:?} not found in {}; available: {}",
                path.display(),
                headers.join(", ")
            ))
        })
    };

    let y_idx = col_index(&roles.y)?;
    let d_idx = col_index(&roles.d)?;
    let w_idx: Vec<usize> =
        roles.w.iter().map(|n| col_index(n)).collect::<Result<_, _>>()?;
    let z_idx: Vec<usize> =
        roles.z.iter().map(|n| col_index(n)).collect::<Result<_, _>>()?;
    let c_idx = match &roles.c {
        CensoringSpec::Column(name) => Some(col_index(name)?),
        CensoringSpec::Constant(_) => None,
    };

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut w: Vec<Vec<f64>> = vec![Vec::new(); w_idx.len()];
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); z_idx.len()];
    let mut c = Vec::new();

    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            CliError::data(format!("{}: row {}: {e}", path.display(), row_no + 2))
        })?;
        let parse = |idx: usize| -> Result<f64, CliError> {
            let raw = record.get(idx).unwrap_or("");
            if raw.is_empty() {
                return Err(CliError::data(format!(
                    "{}: row {}, column {:?}: missing value",
                    path.display(),
                    row_no + 2,
                    headers[idx]
                )));
            }
            let v: f64 = raw.parse().map_err(|_| {
                CliError::data(format!(
                    "{}: row {}, column {:?}: cannot parse {raw:?} as a number",
                    path.display(),
                    row_no + 2,
                    headers[idx]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::data(format!(
                    "{}: row {}, column {:?}: non-finite value {raw:?}",
                    path.display(),
                    row_no + 2,
                    headers[idx]
                )));
            }
            Ok(v)
        };
        y.push(parse(y_idx)?);
        d.push(parse(d_idx)?);
        for (k, &idx) in w_idx.iter().enumerate() {
            w[k].push(parse(idx)?);
        }
        for (k, &idx) in z_idx.iter().enumerate() {
            z[k].push(parse(idx)?);
        }
        if let Some(idx) = c_idx {
            c.push(parse(idx)?);
        }
    }
    if y.is_empty() {
        return Err(CliError::data(format!("{}: no data rows", path.display())));
    }
    if let CensoringSpec::Constant(value) = roles.c {
        c = vec![value; y.len()];
    }

    Dataset::with_names(y, d, w, z, c, roles.w.clone(), roles.z.clone())
        .map_err(|e| CliError::data(e.to_string()))
}

/// A cell that renders as an empty CSV field when absent.
pub fn opt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => String::new(),
    }
}

/// Long-format result table writer with a versioned header.
pub struct TableWriter {
    buffer: String,
}

impl TableWriter {
    pub fn new(schema: &str, seed: u64, columns: &[&str]) -> Self {
        let mut buffer = String::new();
        let _ = writeln!(buffer, "# schema: {schema}");
        let _ = writeln!(buffer, "# seed: {seed}");
        let _ = writeln!(buffer, "{}", columns.join(","));
        TableWriter { buffer }
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.buffer, "{}", cells.join(","));
    }

    pub fn write_to(self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.buffer)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
    }
}

/// Read back a table written by `TableWriter`, returning (header, rows).
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    let header =
        reader.headers().map_err(|e| CliError::data(e.to_string()))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::data(e.to_string()))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
