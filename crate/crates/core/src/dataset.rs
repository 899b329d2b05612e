//! Observational datasets with missing entries.
//!
//! A [`MaskedDataset`] pairs an `n x d` value matrix with a 0/1 observation
//! mask. Missing cells hold a `NaN` sentinel internally and are only
//! reachable through mask-aware accessors, so stray arithmetic on unobserved
//! values poisons results visibly instead of silently reading garbage.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{DarcError, Result};

/// An `n x d` data matrix plus observation mask and column metadata.
#[derive(Clone, Debug)]
pub struct MaskedDataset {
    /// Values; masked cells are NaN. Private so all access is mask-checked.
    x: DMatrix<f64>,
    /// 1.0 observed, 0.0 missing.
    mask: DMatrix<f64>,
    column_names: Vec<String>,
    /// Per-column (min, max) over observed entries, recorded at construction.
    /// Used to rescale imputation-network outputs into a plausible range.
    col_range: Vec<(f64, f64)>,
}

impl MaskedDataset {
    /// Build a dataset from a value matrix and an explicit 0/1 mask.
    ///
    /// Observed entries must be finite; masked entries are normalized to the
    /// NaN sentinel regardless of what `x` held there. Every column needs at
    /// least 2 observed entries (fewer leaves nothing to standardize or
    /// regress on); violations name the offending column.
    pub fn with_mask(
        mut x: DMatrix<f64>,
        mask: DMatrix<f64>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let (n, d) = (x.nrows(), x.ncols());
        if mask.nrows() != n || mask.ncols() != d {
            return Err(DarcError::ShapeMismatch {
                op: "dataset",
                lhs: vec![n, d],
                rhs: vec![mask.nrows(), mask.ncols()],
            });
        }
        if column_names.len() != d {
            return Err(DarcError::InvalidArgument(format!(
                "{} column names for {d} columns",
                column_names.len()
            )));
        }
        if d == 0 {
            return Err(DarcError::InvalidArgument("dataset has no columns".into()));
        }
        for j in 0..d {
            let mut observed = 0usize;
            for i in 0..n {
                match mask[(i, j)] {
                    1.0 => {
                        if !x[(i, j)].is_finite() {
                            return Err(DarcError::InvalidArgument(format!(
                                "non-finite observed value at row {}, column {:?}",
                                i + 1,
                                column_names[j]
                            )));
                        }
                        observed += 1;
                    }
                    0.0 => x[(i, j)] = f64::NAN,
                    other => {
                        return Err(DarcError::InvalidArgument(format!(
                            "mask entry at ({i}, {j}) is {other}, expected 0 or 1"
                        )))
                    }
                }
            }
            if observed < 2 {
                return Err(DarcError::ColumnCoverage {
                    column: column_names[j].clone(),
                    observed,
                });
            }
        }
        let col_range = (0..d)
            .map(|j| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..n {
                    if mask[(i, j)] == 1.0 {
                        lo = lo.min(x[(i, j)]);
                        hi = hi.max(x[(i, j)]);
                    }
                }
                (lo, hi)
            })
            .collect();
        Ok(MaskedDataset { x, mask, column_names, col_range })
    }

    /// Build a fully observed dataset.
    pub fn from_complete(x: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        let mask = DMatrix::from_element(x.nrows(), x.ncols(), 1.0);
        MaskedDataset::with_mask(x, mask, column_names)
    }

    /// Default column names `x1..xd` (1-based, matching common conventions
    /// for variable indices).
    pub fn default_names(d: usize) -> Vec<String> {
        (1..=d).map(|j| format!("x{j}")).collect()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn mask(&self) -> &DMatrix<f64> {
        &self.mask
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Per-column (min, max) over observed entries.
    pub fn col_range(&self) -> &[(f64, f64)] {
        &self.col_range
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)] == 1.0
    }

    /// The value at `(i, j)` if observed.
    pub fn observed(&self, i: usize, j: usize) -> Option<f64> {
        if self.is_observed(i, j) {
            Some(self.x[(i, j)])
        } else {
            None
        }
    }

    /// Number of observed entries in column `j`.
    pub fn observed_count(&self, j: usize) -> usize {
        (0..self.n()).filter(|&i| self.is_observed(i, j)).count()
    }

    /// Total number of masked entries.
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 0.0).count()
    }

    /// Copy of the values with masked cells replaced by `fill`.
    pub fn x_filled(&self, fill: f64) -> DMatrix<f64> {
        let mut out = self.x.clone();
        for i in 0..self.n() {
            for j in 0..self.d() {
                if !self.is_observed(i, j) {
                    out[(i, j)] = fill;
                }
            }
        }
        out
    }

    /// Extract the rows in `idx` as a `(values, mask)` pair with masked
    /// cells already replaced by `fill`. This is the minibatch view used by
    /// training; it skips the per-column coverage check that a standalone
    /// dataset would need.
    pub fn batch(&self, idx: &[usize], fill: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.d();
        let xs = DMatrix::from_fn(idx.len(), d, |r, j| {
            if self.is_observed(idx[r], j) {
                self.x[(idx[r], j)]
            } else {
                fill
            }
        });
        let ms = DMatrix::from_fn(idx.len(), d, |r, j| self.mask[(idx[r], j)]);
        (xs, ms)
    }

    /// Standardize each column to zero mean and unit variance over its
    /// observed entries (population variance). Zero-variance columns are
    /// centered only. Masked cells stay masked; the mask is unchanged.
    pub fn standardize(&self) -> MaskedDataset {
        let (n, d) = (self.n(), self.d());
        let mut out = self.x.clone();
        for j in 0..d {
            let obs: Vec<f64> = (0..n).filter_map(|i| self.observed(i, j)).collect();
            let m = obs.iter().sum::<f64>() / obs.len() as f64;
            let var = obs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / obs.len() as f64;
            let sd = var.sqrt();
            for i in 0..n {
                if self.is_observed(i, j) {
                    let centered = self.x[(i, j)] - m;
                    out[(i, j)] = if sd > 0.0 { centered / sd } else { centered };
                }
            }
        }
        MaskedDataset::with_mask(out, self.mask.clone(), self.column_names.clone())
            .expect("standardizing preserves validity")
    }

    /// Write as CSV with a header row. Masked cells are written as
    /// `missing_token`; observed values use shortest-round-trip formatting,
    /// so a write/load cycle reproduces the dataset bit-for-bit.
    pub fn write_csv(&self, path: &Path, missing_token: &str) -> Result<()> {
        let mut out = String::new();
        out.push_str(&self.column_names.join(","));
        out.push('\n');
        for i in 0..self.n() {
            for j in 0..self.d() {
                if j > 0 {
                    out.push(',');
                }
                match self.observed(i, j) {
                    Some(v) => {
                        let _ = write!(out, "{v}");
                    }
                    None => out.push_str(missing_token),
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|source| DarcError::WriteOutput {
            path: path.display().to_string(),
            source,
        })
    }

    /// Load a CSV written by [`write_csv`] (or any header + numeric-cells
    /// file). Cells equal to `missing_token` are masked; everything else
    /// must parse as a finite `f64`. Errors carry 1-based data-row and
    /// column coordinates.
    pub fn load_csv(path: &Path, missing_token: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| DarcError::ReadInput {
            path: path.display().to_string(),
            source,
        })?;
        let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
        let header = lines
            .next()
            .ok_or_else(|| DarcError::InvalidArgument(format!("{}: empty file", path.display())))?;
        let column_names: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
        let d = column_names.len();
        let mut values: Vec<f64> = Vec::new();
        let mut mask: Vec<f64> = Vec::new();
        let mut rows = 0usize;
        for (r, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != d {
                return Err(DarcError::CsvRagged { row: r + 1, expected: d, got: cells.len() });
            }
            for (c, cell) in cells.iter().enumerate() {
                if *cell == missing_token {
                    values.push(f64::NAN);
                    mask.push(0.0);
                    continue;
                }
                let v: f64 = cell.parse().map_err(|e| DarcError::CsvParse {
                    row: r + 1,
                    col: c + 1,
                    detail: format!("{e}: {cell:?}"),
                })?;
                if !v.is_finite() {
                    return Err(DarcError::CsvParse {
                        row: r + 1,
                        col: c + 1,
                        detail: format!("non-finite value {cell:?}"),
                    });
                }
                values.push(v);
                mask.push(1.0);
            }
            rows += 1;
        }
        let x = DMatrix::from_fn(rows, d, |i, j| values[i * d + j]);
        let m = DMatrix::from_fn(rows, d, |i, j| mask[i * d + j]);
        MaskedDataset::with_mask(x, m, column_names)
    }
}
