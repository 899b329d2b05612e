//! Matrix-level numerics that do not need gradients: the trace-exponential
//! acyclicity functional and rank-tolerant least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{DarcError, Result};

/// Acyclicity functional `h(A) = Tr(exp(A .* A)) - d`.
///
/// `h` is zero exactly when the weighted digraph encoded by `A` has no
/// directed cycle, and grows with cycle strength otherwise. The power series
/// `sum_k Tr(B^k) / k!` with `B = A .* A` is summed until the remaining terms
/// vanish; for a binary DAG every `B^k` is eventually the zero matrix
/// (nilpotency) and all traces are exactly zero, so the result is exactly
/// `0.0` with no tolerance involved. Entries of `B` are non-negative, so no
/// cancellation occurs and the result is never negative.
pub fn acyclicity_value(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(DarcError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(DarcError::InvalidArgument(
            "acyclicity_value: matrix has non-finite entries".into(),
        ));
    }
    let d = a.nrows();
    if d == 0 {
        return Ok(0.0);
    }
    let b = a.component_mul(a);
    // term_k = B^k / k!, starting at k = 1.
    let mut term = b.clone();
    let mut h = term.trace();
    let mut k = 1u64;
    loop {
        k += 1;
        // Guard: the series for any d x d matrix with entries bounded by a
        // few units converges long before this.
        if k > 4096 {
            return Err(DarcError::NonFinite {
                what: "acyclicity power series failed to converge".into(),
                epoch: None,
            });
        }
        term = (&term * &b) / (k as f64);
        let t = term.trace();
        h += t;
        if !h.is_finite() {
            return Err(DarcError::NonFinite {
                what: "acyclicity power series overflowed".into(),
                epoch: None,
            });
        }
        let biggest = term.amax();
        if biggest == 0.0 || (k as usize > d && biggest < 1e-16 * (1.0 + h.abs())) {
            break;
        }
    }
    Ok(h)
}

/// Minimum-norm least squares: coefficients minimizing
/// `|| targets - design * coef ||^2`, plus the residual sum of squares.
///
/// Backed by a singular value decomposition with singular values below
/// `max_sv * 1e-10` treated as zero, so rank-deficient designs (duplicated
/// or constant columns) yield the finite minimum-norm solution instead of
/// blowing up. A zero-column design is allowed and returns `rss = ||y||^2`.
pub fn least_squares(targets: &DVector<f64>, design: &DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    let n = design.nrows();
    let p = design.ncols();
    if targets.len() != n {
        return Err(DarcError::BadShape {
            op: "least_squares",
            detail: format!("design has {n} rows but targets has {} entries", targets.len()),
            got: vec![targets.len()],
        });
    }
    if n == 0 {
        return Err(DarcError::InvalidArgument(
            "least_squares: empty design (zero rows)".into(),
        ));
    }
    if p == 0 {
        return Ok((DVector::zeros(0), targets.dot(targets)));
    }
    let svd = design.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd: U requested");
    let vt = svd.v_t.as_ref().expect("svd: V^T requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * 1e-10;
    // coef = V * diag(1/s where s > tol) * U^T * y
    let uty = u.transpose() * targets;
    let mut z = DVector::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            z[i] = uty[i] / s;
        }
    }
    let coef = vt.transpose() * z;
    let residual = targets - design * &coef;
    let rss = residual.dot(&residual);
    Ok((coef, rss))
}

/// Topological order of a zero-diagonal binary adjacency matrix where
/// `a[(i, j)] = 1` means an edge `i -> j`. Errors if the graph is cyclic.
pub fn topological_order(a: &DMatrix<f64>) -> Result<Vec<usize>> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(DarcError::NotSquare { rows: d, cols: a.ncols() });
    }
    let mut indegree = vec![0usize; d];
    for j in 0..d {
        for i in 0..d {
            if a[(i, j)] != 0.0 {
                indegree[j] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..d).filter(|&j| indegree[j] == 0).collect();
    let mut order = Vec::with_capacity(d);
    while let Some(i) = ready.pop() {
        order.push(i);
        for j in 0..d {
            if a[(i, j)] != 0.0 {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
    }
    if order.len() != d {
        let stuck: Vec<usize> = (0..d).filter(|&j| indegree[j] > 0).collect();
        return Err(DarcError::CyclicGraph(format!(
            "nodes {stuck:?} sit on at least one directed cycle"
        )));
    }
    Ok(order)
}

/// Check that a matrix is a valid adjacency: square, every entry exactly 0
/// or 1, zero diagonal.
pub fn validate_adjacency(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(DarcError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let v = a[(i, j)];
            if v != 0.0 && v != 1.0 {
                return Err(DarcError::InvalidAdjacency(format!(
                    "entry ({i}, {j}) is {v}, expected 0 or 1"
                )));
            }
        }
    }
    for i in 0..a.nrows() {
        if a[(i, i)] != 0.0 {
            return Err(DarcError::InvalidAdjacency(format!(
                "diagonal entry ({i}, {i}) is {}, expected 0",
                a[(i, i)]
            )));
        }
    }
    Ok(())
}

/// Number of edges (non-zero entries) in an adjacency matrix.
pub fn edge_count(a: &DMatrix<f64>) -> usize {
    a.iter().filter(|&&v| v != 0.0).count()
}
