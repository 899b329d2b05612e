//! Graph-recovery metrics: false discovery rate, true positive rate, and
//! structural Hamming distance.
//!
//! Conventions (spelled out because they differ across the literature):
//! a true positive is an estimated edge with matching orientation; an
//! estimated edge whose reversal is in the truth counts as one false
//! positive, and the truth edge it shadows stays undiscovered; SHD compares
//! unordered pairs by status (absent / i->j / j->i) and charges a reversal
//! exactly 1.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{DarcError, Result};
use crate::numeric::validate_adjacency;

/// Recovery metrics with their count decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphMetrics {
    /// `FP / (TP + FP)`, with `0/0` defined as 0.
    pub fdr: f64,
    /// `TP /` (number of truth edges), 0 when the truth is empty.
    pub tpr: f64,
    /// Unordered pairs whose status differs; a reversal costs 1.
    pub shd: usize,
    /// Estimated edges with matching orientation.
    pub true_positives: usize,
    /// Estimated edges that are reversed or absent in the truth skeleton.
    pub false_positives: usize,
    /// Truth edges not estimated with matching orientation.
    pub false_negatives: usize,
    /// Estimated edges whose reversal is a truth edge (already included in
    /// `false_positives`).
    pub reversed: usize,
}

/// Compare an estimated adjacency against the ground truth.
pub fn compute_metrics(estimated: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<GraphMetrics> {
    validate_adjacency(estimated)?;
    validate_adjacency(truth)?;
    let d = estimated.nrows();
    if truth.nrows() != d {
        return Err(DarcError::ShapeMismatch {
            op: "compute_metrics",
            lhs: vec![d, d],
            rhs: vec![truth.nrows(), truth.ncols()],
        });
    }
    let mut true_positives = 0;
    let mut reversed = 0;
    let mut extra = 0;
    let mut false_negatives = 0;
    let mut shd = 0;
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let est = estimated[(i, j)] == 1.0;
            let tru = truth[(i, j)] == 1.0;
            let tru_rev = truth[(j, i)] == 1.0;
            if est {
                if tru {
                    true_positives += 1;
                } else if tru_rev {
                    reversed += 1;
                } else {
                    extra += 1;
                }
            } else if tru {
                false_negatives += 1;
            }
            // Unordered-pair status comparison, visited once per pair.
            if i < j {
                let est_status = pair_status(estimated, i, j);
                let tru_status = pair_status(truth, i, j);
                if est_status != tru_status {
                    shd += 1;
                }
            }
        }
    }
    let false_positives = reversed + extra;
    let discovered = true_positives + false_positives;
    let fdr = if discovered == 0 {
        0.0
    } else {
        false_positives as f64 / discovered as f64
    };
    let truth_edges = crate::numeric::edge_count(truth);
    let tpr = if truth_edges == 0 {
        0.0
    } else {
        true_positives as f64 / truth_edges as f64
    };
    Ok(GraphMetrics {
        fdr,
        tpr,
        shd,
        true_positives,
        false_positives,
        false_negatives,
        reversed,
    })
}

/// Status of the unordered pair {i, j}: 0 absent, 1 for i->j, 2 for j->i,
/// 3 for both directions present (a 2-cycle; possible in raw estimates).
fn pair_status(a: &DMatrix<f64>, i: usize, j: usize) -> u8 {
    let fwd = a[(i, j)] == 1.0;
    let bwd = a[(j, i)] == 1.0;
    match (fwd, bwd) {
        (false, false) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (true, true) => 3,
    }
}
