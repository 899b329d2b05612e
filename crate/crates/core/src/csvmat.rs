//! Headerless CSV reading/writing for plain numeric matrices (adjacency
//! matrices, weight matrices, probability matrices).
//!
//! Values are written with Rust's shortest-round-trip float formatting, so a
//! write/read cycle reproduces every `f64` bit-for-bit and identical inputs
//! produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{DarcError, Result};

/// Render a matrix as headerless CSV text.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// Write a matrix as headerless CSV.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, matrix_to_csv(m)).map_err(|source| DarcError::WriteOutput {
        path: path.display().to_string(),
        source,
    })
}

/// Read a headerless CSV matrix. Rows must all have the same width; parse
/// failures are reported with 1-based row/column coordinates.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| DarcError::ReadInput {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if let Some(w) = width {
            if cells.len() != w {
                return Err(DarcError::CsvRagged {
                    row: idx + 1,
                    expected: w,
                    got: cells.len(),
                });
            }
        } else {
            width = Some(cells.len());
        }
        let mut row = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|e| DarcError::CsvParse {
                row: idx + 1,
                col: col + 1,
                detail: format!("{e}: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(DarcError::CsvParse {
                    row: idx + 1,
                    col: col + 1,
                    detail: format!("non-finite value {cell:?}"),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = width.unwrap_or(0);
    if nrows == 0 {
        return Err(DarcError::InvalidArgument(format!(
            "{}: empty matrix file",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Read an adjacency matrix (square, entries 0/1, zero diagonal).
pub fn read_adjacency(path: &Path) -> Result<DMatrix<f64>> {
    let m = read_matrix(path)?;
    crate::numeric::validate_adjacency(&m)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut rng = crate::rng::RngStream::new(9, "csvmat");
        let m = DMatrix::from_fn(5, 3, |_, _| rng.normal() * 1e-7);
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(m.nrows(), back.nrows());
        for i in 0..5 {
            for j in 0..3 {
                assert_eq!(m[(i, j)].to_bits(), back[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn ragged_rows_are_reported_with_row_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,0\n0\n").unwrap();
        match read_matrix(&path) {
            Err(DarcError::CsvRagged { row: 2, expected: 2, got: 1 }) => {}
            other => panic!("expected ragged error, got {other:?}"),
        }
    }

    #[test]
    fn parse_failure_is_reported_with_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,0\n0,x\n").unwrap();
        match read_matrix(&path) {
            Err(DarcError::CsvParse { row: 2, col: 2, .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn adjacency_reader_rejects_non_binary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adj.csv");
        std::fs::write(&path, "0,0.5\n0,0\n").unwrap();
        assert!(matches!(
            read_adjacency(&path),
            Err(DarcError::InvalidAdjacency(_))
        ));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_matrix(Path::new("/nonexistent/m.csv")).unwrap_err();
        match err {
            DarcError::ReadInput { path, .. } => assert!(path.contains("nonexistent")),
            other => panic!("expected ReadInput, got {other:?}"),
        }
    }
}
