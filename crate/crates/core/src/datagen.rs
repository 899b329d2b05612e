//! Synthetic ground truth: random DAGs, structural-equation data, and
//! missing-completely-at-random masking.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::MaskedDataset;
use crate::error::{DarcError, Result};
use crate::numeric::{edge_count, topological_order, validate_adjacency};
use crate::rng::RngStream;

/// How the random DAG skeleton is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GraphScheme {
    /// Every strictly-upper-triangular entry is an edge (a complete DAG),
    /// then node labels are randomly permuted.
    UpperTriangularPermuted,
    /// Each strictly-upper-triangular entry is an edge independently with
    /// probability `p`, then node labels are randomly permuted.
    Bernoulli { p: f64 },
}

/// Functional form of each structural equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemFunc {
    /// `x_i = sum_j w_ji * x_j + noise_i`
    Linear,
    /// `x_i = sum_j w_ji * x_j^2 + noise_i`
    Quadratic,
}

/// Distribution of the additive noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseKind {
    /// `N(0, sigma^2)`.
    Gaussian { sigma: f64 },
    /// Sign-preserving power transform of a Gaussian draw:
    /// `sign(z) * |z|^exponent` with `z ~ N(0, sigma^2)`. Heavier tails than
    /// Gaussian for `exponent > 1`, so linear-regression scores can no
    /// longer rely on Gaussianity.
    NonGaussianPower { sigma: f64, exponent: f64 },
}

/// A generated DAG: binary adjacency plus edge weights (`a[(i, j)] = 1`
/// means `i -> j`, with the weight in `weights[(i, j)]`).
#[derive(Debug, Clone)]
pub struct GroundTruthGraph {
    adjacency: DMatrix<f64>,
    weights: DMatrix<f64>,
}

impl GroundTruthGraph {
    /// Wrap an adjacency/weights pair, validating that the adjacency is a
    /// binary zero-diagonal DAG and that weights sit exactly on its edges.
    pub fn new(adjacency: DMatrix<f64>, weights: DMatrix<f64>) -> Result<Self> {
        validate_adjacency(&adjacency)?;
        topological_order(&adjacency)?;
        if weights.nrows() != adjacency.nrows() || weights.ncols() != adjacency.ncols() {
            return Err(DarcError::ShapeMismatch {
                op: "ground_truth_graph",
                lhs: vec![adjacency.nrows(), adjacency.ncols()],
                rhs: vec![weights.nrows(), weights.ncols()],
            });
        }
        for i in 0..adjacency.nrows() {
            for j in 0..adjacency.ncols() {
                let has_edge = adjacency[(i, j)] == 1.0;
                let has_weight = weights[(i, j)] != 0.0;
                if has_weight && !has_edge {
                    return Err(DarcError::InvalidArgument(format!(
                        "weight at ({i}, {j}) without an edge"
                    )));
                }
                if has_edge && !weights[(i, j)].is_finite() {
                    return Err(DarcError::InvalidArgument(format!(
                        "non-finite weight at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(GroundTruthGraph { adjacency, weights })
    }

    pub fn d(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn edge_count(&self) -> usize {
        edge_count(&self.adjacency)
    }
}

/// Draw a random DAG on `d >= 2` nodes.
///
/// Both schemes draw edges on the strictly-upper-triangular part (which is
/// acyclic by construction) and then relabel the nodes with a random
/// permutation, so node index carries no information about causal order.
/// Edge weights are uniform on `[-2, -0.5] U [0.5, 2]`: bounded away from
/// zero so every true edge has detectable strength.
pub fn generate_dag(d: usize, scheme: GraphScheme, rng: &mut RngStream) -> Result<GroundTruthGraph> {
    let mut problems = Vec::new();
    if d < 2 {
        problems.push(format!("d must be at least 2, got {d}"));
    }
    if let GraphScheme::Bernoulli { p } = scheme {
        if !(0.0..=1.0).contains(&p) {
            problems.push(format!("edge probability must be in [0, 1], got {p}"));
        }
    }
    if !problems.is_empty() {
        return Err(DarcError::InvalidArgument(problems.join("; ")));
    }

    // Upper-triangular skeleton and weights in row-major draw order.
    let mut adj_ut = DMatrix::zeros(d, d);
    let mut w_ut = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let edge = match scheme {
                GraphScheme::UpperTriangularPermuted => true,
                GraphScheme::Bernoulli { p } => rng.bernoulli(p),
            };
            if edge {
                adj_ut[(i, j)] = 1.0;
                let magnitude = rng.uniform(0.5, 2.0);
                let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                w_ut[(i, j)] = sign * magnitude;
            }
        }
    }

    // Random relabelling: position i in the triangular draw becomes node
    // perm[i] in the output.
    let mut perm: Vec<usize> = (0..d).collect();
    rng.shuffle(&mut perm);
    let mut adjacency = DMatrix::zeros(d, d);
    let mut weights = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if adj_ut[(i, j)] == 1.0 {
                adjacency[(perm[i], perm[j])] = 1.0;
                weights[(perm[i], perm[j])] = w_ut[(i, j)];
            }
        }
    }
    GroundTruthGraph::new(adjacency, weights)
}

/// Evaluate the structural equations with caller-provided noise, one row of
/// `noise` per sample. This is the deterministic core of [`simulate_sem`];
/// tests inject known noise through it.
pub fn simulate_sem_with_noise(
    graph: &GroundTruthGraph,
    noise: &DMatrix<f64>,
    func: SemFunc,
) -> Result<DMatrix<f64>> {
    let d = graph.d();
    if noise.ncols() != d {
        return Err(DarcError::ShapeMismatch {
            op: "simulate_sem",
            lhs: vec![noise.nrows(), noise.ncols()],
            rhs: vec![noise.nrows(), d],
        });
    }
    let n = noise.nrows();
    let order = topological_order(graph.adjacency())?;
    let w = graph.weights();
    let mut x = DMatrix::zeros(n, d);
    for &i in &order {
        let parents: Vec<usize> = (0..d).filter(|&j| graph.adjacency()[(j, i)] == 1.0).collect();
        for r in 0..n {
            let mut v = noise[(r, i)];
            for &j in &parents {
                let xj = x[(r, j)];
                let basis = match func {
                    SemFunc::Linear => xj,
                    SemFunc::Quadratic => xj * xj,
                };
                v += w[(j, i)] * basis;
            }
            x[(r, i)] = v;
        }
    }
    Ok(x)
}

/// Draw `n` samples from the structural equation model defined by `graph`:
/// each node is a function of its parents plus independent noise, evaluated
/// in topological order.
pub fn simulate_sem(
    graph: &GroundTruthGraph,
    n: usize,
    func: SemFunc,
    noise: NoiseKind,
    rng: &mut RngStream,
) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(DarcError::InvalidArgument("sample count must be positive".into()));
    }
    match noise {
        NoiseKind::Gaussian { sigma } | NoiseKind::NonGaussianPower { sigma, .. } => {
            if sigma < 0.0 {
                return Err(DarcError::InvalidArgument(format!(
                    "noise sigma must be non-negative, got {sigma}"
                )));
            }
        }
    }
    let d = graph.d();
    let noise_matrix = DMatrix::from_fn(n, d, |_, _| match noise {
        NoiseKind::Gaussian { sigma } => sigma * rng.normal(),
        NoiseKind::NonGaussianPower { sigma, exponent } => {
            let z = sigma * rng.normal();
            z.signum() * z.abs().powf(exponent)
        }
    });
    simulate_sem_with_noise(graph, &noise_matrix, func)
}

/// Hide each entry independently with probability `rate` (missing completely
/// at random). Observed entries are copied untouched. Fails if any column is
/// left with fewer than 2 observed entries, naming the column.
pub fn apply_missingness(
    x_full: &DMatrix<f64>,
    rate: f64,
    rng: &mut RngStream,
) -> Result<MaskedDataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(DarcError::InvalidArgument(format!(
            "missing rate must be in [0, 1), got {rate}"
        )));
    }
    let mask = DMatrix::from_fn(x_full.nrows(), x_full.ncols(), |_, _| {
        if rng.bernoulli(rate) {
            0.0
        } else {
            1.0
        }
    });
    MaskedDataset::with_mask(
        x_full.clone(),
        mask,
        MaskedDataset::default_names(x_full.ncols()),
    )
}
