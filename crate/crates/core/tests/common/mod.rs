//! Independent oracles for the acceptance suite.
//!
//! Everything here recomputes a library quantity through a different
//! algorithm than the library uses: cycle detection by depth-first search
//! instead of the power-series functional, regression through an explicit
//! Jacobi-eigendecomposition pseudo-inverse instead of SVD least squares,
//! graph metrics by direct per-pair case analysis, and finite differences
//! evaluated without touching the autodiff graph. Agreement between the two
//! paths is the acceptance evidence.

use nalgebra::DMatrix;

/// True when the directed graph given by nonzero entries of `a` has a cycle.
/// Classic three-color depth-first search.
pub fn dfs_has_cycle(a: &DMatrix<f64>) -> bool {
    const WHITE: u8 = 0;
    const GRAY: u8 = 1;
    const BLACK: u8 = 2;

    fn visit(a: &DMatrix<f64>, color: &mut [u8], u: usize) -> bool {
        color[u] = GRAY;
        for v in 0..a.ncols() {
            if a[(u, v)] != 0.0 {
                if color[v] == GRAY {
                    return true;
                }
                if color[v] == WHITE && visit(a, color, v) {
                    return true;
                }
            }
        }
        color[u] = BLACK;
        false
    }

    let d = a.nrows();
    let mut color = vec![WHITE; d];
    (0..d).any(|s| color[s] == WHITE && visit(a, &mut color, s))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns the eigenvalues and the matrix whose columns are eigenvectors.
fn jacobi_eigen(s: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = s.len();
    let mut a = s.to_vec();
    let mut v = vec![vec![0.0; k]; k];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..k)
            .flat_map(|p| (0..k).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off < 1e-28 {
            break;
        }
        for p in 0..k {
            for q in (p + 1)..k {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for i in 0..k {
                    let aip = a[i][p];
                    let aiq = a[i][q];
                    a[i][p] = c * aip - sn * aiq;
                    a[i][q] = sn * aip + c * aiq;
                }
                for j in 0..k {
                    let apj = a[p][j];
                    let aqj = a[q][j];
                    a[p][j] = c * apj - sn * aqj;
                    a[q][j] = sn * apj + c * aqj;
                }
                for i in 0..k {
                    let vip = v[i][p];
                    let viq = v[i][q];
                    v[i][p] = c * vip - sn * viq;
                    v[i][q] = sn * vip + c * viq;
                }
            }
        }
    }
    let eig = (0..k).map(|i| a[i][i]).collect();
    (eig, v)
}

/// Residual sum of squares of regressing `y` on the rows of `design`,
/// solved through the normal equations with an eigendecomposition
/// pseudo-inverse (rank-deficient designs get the minimum-norm solution).
pub fn pinv_rss(y: &[f64], design: &[Vec<f64>]) -> f64 {
    let n = y.len();
    assert_eq!(design.len(), n);
    let k = design[0].len();

    let mut gram = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for (row, &yi) in design.iter().zip(y.iter()) {
        for a in 0..k {
            rhs[a] += row[a] * yi;
            for b in 0..k {
                gram[a][b] += row[a] * row[b];
            }
        }
    }

    let (eig, v) = jacobi_eigen(&gram);
    let lam_max = eig.iter().cloned().fold(0.0f64, |m, e| m.max(e.abs()));
    let tol = lam_max * k as f64 * f64::EPSILON;

    // beta = V diag(1/lambda) V^T rhs, dropping near-null directions.
    let mut beta = vec![0.0; k];
    for j in 0..k {
        if eig[j].abs() <= tol {
            continue;
        }
        let proj: f64 = (0..k).map(|i| v[i][j] * rhs[i]).sum();
        let scaled = proj / eig[j];
        for i in 0..k {
            beta[i] += v[i][j] * scaled;
        }
    }

    design
        .iter()
        .zip(y.iter())
        .map(|(row, &yi)| {
            let fit: f64 = row.iter().zip(beta.iter()).map(|(&w, &b)| w * b).sum();
            (yi - fit) * (yi - fit)
        })
        .sum()
}

/// Penalized-likelihood score of `adjacency` on `x`, recomputed end to end:
/// per-column regression on the (optionally squared) parent values plus an
/// intercept, residuals pooled across columns, floored at 1e-12.
pub fn oracle_bic(adjacency: &DMatrix<f64>, x: &DMatrix<f64>, quadratic: bool) -> f64 {
    let n = x.nrows();
    let d = x.ncols();
    let mut total_rss = 0.0;
    let mut edges = 0usize;
    for j in 0..d {
        let parents: Vec<usize> = (0..d).filter(|&i| adjacency[(i, j)] != 0.0).collect();
        edges += parents.len();
        let y: Vec<f64> = (0..n).map(|r| x[(r, j)]).collect();
        let design: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                let mut row: Vec<f64> = parents
                    .iter()
                    .map(|&p| {
                        let v = x[(r, p)];
                        if quadratic {
                            v * v
                        } else {
                            v
                        }
                    })
                    .collect();
                row.push(1.0);
                row
            })
            .collect();
        total_rss += pinv_rss(&y, &design);
    }
    let nd = (n * d) as f64;
    nd * (total_rss.max(1e-12) / nd).ln() + (n as f64).ln() * edges as f64
}

/// Graph-recovery metrics recomputed by direct case analysis over pairs.
#[derive(Debug, PartialEq)]
pub struct OracleMetrics {
    pub fdr: f64,
    pub tpr: f64,
    pub shd: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub reversed: usize,
}

pub fn oracle_metrics(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> OracleMetrics {
    let d = est.nrows();
    let (mut tp, mut fp, mut fnn, mut rev) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let e = est[(i, j)] != 0.0;
            let t = truth[(i, j)] != 0.0;
            if e && t {
                tp += 1;
            }
            if e && !t {
                fp += 1;
                if truth[(j, i)] != 0.0 {
                    rev += 1;
                }
            }
            if !e && t {
                fnn += 1;
            }
        }
    }
    // One point of status disagreement per unordered pair; a reversed edge
    // is one disagreement, not two.
    let mut shd = 0usize;
    for i in 0..d {
        for j in (i + 1)..d {
            let status = |a: &DMatrix<f64>| {
                (if a[(i, j)] != 0.0 { 1u8 } else { 0 }) + (if a[(j, i)] != 0.0 { 2u8 } else { 0 })
            };
            if status(est) != status(truth) {
                shd += 1;
            }
        }
    }
    let fdr = if tp + fp == 0 {
        0.0
    } else {
        fp as f64 / (tp + fp) as f64
    };
    let tpr = if tp + fnn == 0 {
        0.0
    } else {
        tp as f64 / (tp + fnn) as f64
    };
    OracleMetrics {
        fdr,
        tpr,
        shd,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fnn,
        reversed: rev,
    }
}

/// Central finite-difference gradient of `f` at `x`, evaluated without any
/// autodiff machinery.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = point[i];
            point[i] = orig + step;
            let fp = f(&point);
            point[i] = orig - step;
            let fm = f(&point);
            point[i] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// Largest relative discrepancy between two gradients; the scale floor of 1
/// makes the comparison absolute for near-zero entries.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs() / f64::max(1.0, f64::max(x.abs(), y.abs())))
        .fold(0.0, f64::max)
}

/// Median of a list (average of the middle two for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}
