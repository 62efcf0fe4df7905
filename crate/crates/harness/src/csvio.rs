//! CSV helpers: fixed 17-significant-digit numbers, LF line endings.

use std::path::Path;

use crate::error::{HarnessError, Result};

/// `x` with 17 significant digits, which round-trips every `f64`.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<R, I>(header: &[String], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let to_err = |e: csv::Error| HarnessError::data("<buffer>", e.to_string());
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row).map_err(to_err)?;
    }
    w.into_inner()
        .map_err(|e| HarnessError::data("<buffer>", e.to_string()))
}

/// A parsed numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Reads a CSV whose every field (header aside) is a number; empty fields
/// read as NaN.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| HarnessError::data(path, e.to_string()))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| HarnessError::data(path, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::data(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| {
                if f.is_empty() {
                    Ok(f64::NAN)
                } else {
                    f.parse::<f64>().map_err(|_| {
                        HarnessError::data(path, format!("row {}: `{f}` is not a number", i + 2))
                    })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}
