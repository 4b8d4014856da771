//! Dataset CSV: a `probe_id,t=<hours>,...` header and one probe per row.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::basis::standardize_times;
use crate::error::{Error, Result};
use crate::model::ExpressionMatrix;

pub fn read_dataset_csv(path: &Path) -> Result<ExpressionMatrix> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_dataset_csv(&text)
}

pub fn parse_dataset_csv(text: &str) -> Result<ExpressionMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("probe_id") {
        return Err(Error::invalid("dataset header must start with probe_id"));
    }
    let mut times = Vec::with_capacity(header.len().saturating_sub(1));
    for field in header.iter().skip(1) {
        let hours = field
            .strip_prefix("t=")
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::invalid(format!("bad time column header {field:?}, expected t=<hours>")))?;
        times.push(hours);
    }
    let grid = standardize_times(&times)?;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        if record.len() != times.len() + 1 {
            return Err(Error::invalid(format!(
                "data row {} has {} fields, expected {}",
                line + 1,
                record.len(),
                times.len() + 1
            )));
        }
        ids.push(record[0].to_string());
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::invalid(format!("probe {}: unparsable value {field:?}", &record[0])))?;
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "probe {}: non-finite value at t={}",
                    &record[0], times[j]
                )));
            }
            values.push(v);
        }
    }
    if ids.is_empty() {
        return Err(Error::invalid("dataset has no probes"));
    }
    let matrix = DMatrix::from_row_slice(ids.len(), times.len(), &values);
    ExpressionMatrix::new(matrix, ids, grid)
}

pub fn write_dataset_csv(path: &Path, data: &ExpressionMatrix) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(format_dataset_csv(data).as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Values are written in shortest round-trip form, so reading the file back
/// reproduces the matrix exactly.
pub fn format_dataset_csv(data: &ExpressionMatrix) -> String {
    let mut s = String::from("probe_id");
    for t in data.grid().times_hours() {
        s.push_str(&format!(",t={t}"));
    }
    s.push('\n');
    let v = data.values();
    for (i, id) in data.probe_ids().iter().enumerate() {
        s.push_str(id);
        for j in 0..v.ncols() {
            s.push_str(&format!(",{}", v[(i, j)]));
        }
        s.push('\n');
    }
    s
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("malformed CSV: {e}"))
}
