//! CSV reading and writing.
//!
//! Files are comma-separated with `.` as decimal mark and LF line endings.
//! An optional single header row is detected by its first cell failing to
//! parse as a number. Reals are written with 17 significant digits so a
//! save/load round trip is bit-exact.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Validation applied to parsed cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatrixKind {
    /// Any finite real.
    #[default]
    Real,
    /// Genotype codes 0, 1 or 2.
    Genotype,
    /// Any real including `inf`; NaN is still rejected.
    Extended,
}

/// A parsed CSV: optional header plus a row-major numeric body.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub values: DMatrix<f64>,
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    if v == 0.0 {
        // keeps the sign of -0.0 out of the files
        "0".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_cell(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok()
}

pub fn load_table(path: &Path, kind: MatrixKind) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let parse_err = |row: usize, col: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        col,
        msg,
    };

    let mut header = None;
    let mut data: Vec<f64> = Vec::new();
    let mut ncols: Option<usize> = None;
    let mut nrows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if r == 0 && record.get(0).is_some_and(|c| parse_cell(c).is_none()) {
            header = Some(record.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>());
            ncols = Some(record.len());
            continue;
        }
        if record.len() == 1 && record.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        match ncols {
            Some(c) if c != record.len() => {
                return Err(parse_err(
                    row,
                    record.len().min(c) + 1,
                    format!("expected {c} fields, found {}", record.len()),
                ))
            }
            None => ncols = Some(record.len()),
            _ => {}
        }
        for (c, cell) in record.iter().enumerate() {
            let col = c + 1;
            if cell.trim().is_empty() {
                return Err(parse_err(row, col, "missing value".into()));
            }
            let v = parse_cell(cell)
                .ok_or_else(|| parse_err(row, col, format!("not a number: {cell:?}")))?;
            if v.is_nan() || (v.is_infinite() && kind != MatrixKind::Extended) {
                return Err(parse_err(row, col, format!("non-finite value {cell:?}")));
            }
            if kind == MatrixKind::Genotype && !(v == 0.0 || v == 1.0 || v == 2.0) {
                return Err(parse_err(row, col, format!("genotype must be 0, 1 or 2, got {cell:?}")));
            }
            data.push(v);
        }
        nrows += 1;
    }
    let ncols = if nrows == 0 { 0 } else { ncols.unwrap_or(0) };
    if nrows == 0 {
        return Err(parse_err(1, 1, "no data rows".into()));
    }
    Ok(Table {
        header,
        values: DMatrix::from_row_slice(nrows, ncols, &data),
    })
}

/// Rectangular numeric CSV as a matrix.
pub fn load_matrix_csv(path: &Path, kind: MatrixKind) -> Result<DMatrix<f64>> {
    load_table(path, kind).map(|t| t.values)
}

/// Single-column CSV (or the first column of a wider one) as a vector.
pub fn load_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = load_matrix_csv(path, MatrixKind::Real)?;
    if m.ncols() != 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            col: 2,
            msg: format!("expected a single column, found {}", m.ncols()),
        });
    }
    Ok(m.column(0).into_owned())
}

/// Writes rows of pre-formatted cells.
pub fn write_rows<I, R>(path: &Path, header: Option<&[&str]>, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in rows {
        let cells: Vec<String> = row.into_iter().collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn save_matrix_csv(path: &Path, m: &DMatrix<f64>, header: Option<&[&str]>) -> Result<()> {
    write_rows(
        path,
        header,
        m.row_iter().map(|r| r.iter().map(|v| fmt_real(*v)).collect::<Vec<_>>()),
    )
}

pub fn save_vector_csv(path: &Path, v: &DVector<f64>, name: &str) -> Result<()> {
    write_rows(path, Some(&[name]), v.iter().map(|x| vec![fmt_real(*x)]))
}

/// Column names `prefix1..prefixK`.
pub fn numbered_header(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}
