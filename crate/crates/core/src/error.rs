//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, DarcError>;

/// All failures surfaced by this crate.
///
/// Variants are grouped by how callers usually react to them: usage and
/// validation errors (bad arguments, malformed input files) versus runtime
/// failures (I/O while writing, numerical blow-ups mid-training). The CLI maps
/// the former to exit code 2 and the latter to exit code 1.
#[derive(Debug, Error)]
pub enum DarcError {
    /// Two operands have incompatible shapes for the named operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A single operand has the wrong shape or rank for the named operation.
    #[error("{op}: {detail} (got shape {got:?})")]
    BadShape {
        op: &'static str,
        detail: String,
        got: Vec<usize>,
    },

    /// `backward` was called on a tensor with more than one element.
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// `backward` was called on a tensor that does not participate in any
    /// recorded computation (no gradient path to trainable parameters).
    #[error("backward called on a tensor detached from any recorded computation graph")]
    DetachedGraph,

    /// A square matrix was required.
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    /// An adjacency matrix was not a zero-diagonal 0/1 matrix.
    #[error("invalid adjacency matrix: {0}")]
    InvalidAdjacency(String),

    /// A graph that must be acyclic contains a cycle.
    #[error("graph contains a cycle: {0}")]
    CyclicGraph(String),

    /// Invalid argument or configuration. The message lists every failure
    /// found, not just the first.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A dataset column has too few observed entries to be usable.
    #[error("column {column:?} has only {observed} observed entries (need at least 2)")]
    ColumnCoverage { column: String, observed: usize },

    /// A CSV row has the wrong number of cells. `row` is the 1-based data row
    /// index (the header is row 0).
    #[error("csv row {row}: expected {expected} cells, got {got}")]
    CsvRagged {
        row: usize,
        expected: usize,
        got: usize,
    },

    /// A CSV cell failed to parse. Coordinates are 1-based data row and
    /// 1-based column.
    #[error("csv cell at row {row}, column {col}: {detail}")]
    CsvParse {
        row: usize,
        col: usize,
        detail: String,
    },

    /// A required input file is missing or unreadable; carries the path.
    #[error("cannot read {path}: {source}")]
    ReadInput {
        path: String,
        source: std::io::Error,
    },

    /// Writing an output file failed; carries the path.
    #[error("cannot write {path}: {source}")]
    WriteOutput {
        path: String,
        source: std::io::Error,
    },

    /// JSON (de)serialization failed.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A quantity that must stay finite became NaN or infinite.
    #[error("non-finite value in {what}{}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    NonFinite { what: String, epoch: Option<usize> },

    /// An operation that only makes sense with masked entries was called on a
    /// fully observed dataset.
    #[error("dataset has no masked entries")]
    NoMaskedEntries,

    /// A checkpoint file does not match the expected layout.
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

impl DarcError {
    /// True for errors caused by bad usage: invalid arguments, malformed or
    /// missing inputs. The CLI reports these with exit code 2; everything
    /// else (runtime failure) maps to exit code 1.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            DarcError::ShapeMismatch { .. }
                | DarcError::BadShape { .. }
                | DarcError::NotSquare { .. }
                | DarcError::InvalidAdjacency(_)
                | DarcError::CyclicGraph(_)
                | DarcError::InvalidArgument(_)
                | DarcError::ColumnCoverage { .. }
                | DarcError::CsvRagged { .. }
                | DarcError::CsvParse { .. }
                | DarcError::ReadInput { .. }
                | DarcError::Json(_)
                | DarcError::NoMaskedEntries
                | DarcError::BadCheckpoint(_)
        )
    }

    /// Short machine-readable tag for the error kind, used in the CLI's
    /// error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            DarcError::ShapeMismatch { .. } => "shape_mismatch",
            DarcError::BadShape { .. } => "bad_shape",
            DarcError::NonScalarLoss(_) => "non_scalar_loss",
            DarcError::DetachedGraph => "detached_graph",
            DarcError::NotSquare { .. } => "not_square",
            DarcError::InvalidAdjacency(_) => "invalid_adjacency",
            DarcError::CyclicGraph(_) => "cyclic_graph",
            DarcError::InvalidArgument(_) => "invalid_argument",
            DarcError::ColumnCoverage { .. } => "column_coverage",
            DarcError::CsvRagged { .. } => "csv_ragged",
            DarcError::CsvParse { .. } => "csv_parse",
            DarcError::ReadInput { .. } => "read_input",
            DarcError::WriteOutput { .. } => "write_output",
            DarcError::Json(_) => "json",
            DarcError::NonFinite { .. } => "non_finite",
            DarcError::NoMaskedEntries => "no_masked_entries",
            DarcError::BadCheckpoint(_) => "bad_checkpoint",
        }
    }
}
