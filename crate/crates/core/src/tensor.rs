//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Every operation that consumes a tensor requiring gradients records a node
//! in a computation graph. [`Tensor::backward`] walks that graph once in
//! reverse topological order and accumulates `d loss / d tensor` into each
//! participating tensor's `grad` buffer. Gradients accumulate across repeated
//! `backward` calls until [`Tensor::zero_grad`] resets them, so gradient
//! averaging over several samples is just several backward passes.
//!
//! Tensors are rank 1 or rank 2, row-major, and deliberately not `Send`/
//! `Sync`: a computation graph belongs to one thread. Run independent graphs
//! on independent threads instead of sharing one.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use nalgebra::DMatrix;

use crate::error::{DarcError, Result};

/// Vector-Jacobian product: given the upstream gradient and the node itself
/// (for access to its output values and parents), produce the gradient
/// contribution for each parent. `None` marks a parent that does not receive
/// gradients through this op (e.g. a selection mask).
type VjpFn = Box<dyn Fn(&[f64], &Node) -> Vec<Option<Vec<f64>>>>;

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    vjp: Option<VjpFn>,
    op: &'static str,
}

/// A shared handle to a tensor node. Cloning is shallow: clones view and
/// mutate the same storage, which is how optimizers hold parameters that the
/// model also holds.
pub struct Tensor(Rc<RefCell<Node>>);

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.0.borrow();
        f.debug_struct("Tensor")
            .field("op", &n.op)
            .field("shape", &n.shape)
            .field("requires_grad", &n.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn new_node(
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        vjp: Option<VjpFn>,
        op: &'static str,
    ) -> Tensor {
        debug_assert_eq!(numel_of(&shape), values.len(), "{op}: bad node size");
        let n = values.len();
        Tensor(Rc::new(RefCell::new(Node {
            shape,
            values,
            grad: vec![0.0; n],
            requires_grad,
            parents,
            vjp,
            op,
        })))
    }

    /// Constant (non-trainable) tensor.
    pub fn constant(shape: &[usize], values: Vec<f64>) -> Tensor {
        assert_eq!(
            numel_of(shape),
            values.len(),
            "constant: {shape:?} does not hold {} values",
            values.len()
        );
        Tensor::new_node(shape.to_vec(), values, false, Vec::new(), None, "constant")
    }

    /// Trainable leaf tensor: participates in gradients.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Tensor {
        assert_eq!(
            numel_of(shape),
            values.len(),
            "param: {shape:?} does not hold {} values",
            values.len()
        );
        Tensor::new_node(shape.to_vec(), values, true, Vec::new(), None, "param")
    }

    /// Constant scalar of shape `[1]`.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(&[1], vec![v])
    }

    /// All-zero constant.
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::constant(shape, vec![0.0; numel_of(shape)])
    }

    /// Constant tensor from a row-major matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Tensor {
        let (r, c) = (m.nrows(), m.ncols());
        let mut values = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                values.push(m[(i, j)]);
            }
        }
        Tensor::constant(&[r, c], values)
    }

    /// Copy this tensor's values into a matrix. Rank-1 tensors become a
    /// single column.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.0.borrow();
        let (r, c) = match n.shape.len() {
            1 => (n.shape[0], 1),
            2 => (n.shape[0], n.shape[1]),
            _ => panic!("to_matrix: rank {} tensor", n.shape.len()),
        };
        DMatrix::from_fn(r, c, |i, j| n.values[i * c + j])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.borrow().requires_grad
    }

    /// Copy of the values, row-major.
    pub fn values(&self) -> Vec<f64> {
        self.0.borrow().values.clone()
    }

    /// Value of a single-element tensor.
    pub fn value(&self) -> f64 {
        let n = self.0.borrow();
        assert_eq!(n.values.len(), 1, "value: tensor has {} elements", n.values.len());
        n.values[0]
    }

    /// Copy of the accumulated gradient, row-major. All-zero until a
    /// `backward` pass reaches this tensor.
    pub fn grad(&self) -> Vec<f64> {
        self.0.borrow().grad.clone()
    }

    /// Reset the accumulated gradient to zero.
    pub fn zero_grad(&self) {
        for g in self.0.borrow_mut().grad.iter_mut() {
            *g = 0.0;
        }
    }

    /// Sum of squared gradient entries (for global-norm clipping).
    pub fn grad_norm_sq(&self) -> f64 {
        self.0.borrow().grad.iter().map(|g| g * g).sum()
    }

    /// Mutate the stored values in place (optimizer steps, manual edits).
    /// The gradient buffer is passed alongside so steps can read it.
    pub fn update_values(&self, f: impl FnOnce(&mut [f64], &[f64])) {
        let mut n = self.0.borrow_mut();
        let node = &mut *n;
        f(&mut node.values, &node.grad);
    }

    /// Overwrite the stored values. Panics if the length differs.
    pub fn set_values(&self, values: &[f64]) {
        let mut n = self.0.borrow_mut();
        assert_eq!(n.values.len(), values.len(), "set_values: length mismatch");
        n.values.copy_from_slice(values);
    }

    /// A constant copy of this tensor, cut off from the recorded graph.
    /// Gradients flowing through the copy never reach this tensor.
    pub fn detach(&self) -> Tensor {
        let n = self.0.borrow();
        Tensor::constant(&n.shape, n.values.clone())
    }

    /// Build an op result node. When no parent requires gradients the result
    /// is a plain constant and the graph records nothing.
    fn op_result(
        op: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        vjp: VjpFn,
    ) -> Tensor {
        if parents.iter().any(|p| p.requires_grad()) {
            Tensor::new_node(shape, values, true, parents, Some(vjp), op)
        } else {
            Tensor::new_node(shape, values, false, Vec::new(), None, op)
        }
    }

    // ------------------------------------------------------------------
    // Elementwise unary ops
    // ------------------------------------------------------------------

    /// Shared skeleton for elementwise unary ops. `dfdx(x, y)` is the local
    /// derivative written in terms of the input and/or the output.
    fn unary(
        &self,
        op: &'static str,
        fwd: impl Fn(f64) -> f64,
        dfdx: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let n = self.0.borrow();
        let values: Vec<f64> = n.values.iter().map(|&x| fwd(x)).collect();
        let shape = n.shape.clone();
        drop(n);
        Tensor::op_result(
            op,
            shape,
            values,
            vec![self.clone()],
            Box::new(move |up, node| {
                let x = node.parents[0].0.borrow();
                let g = up
                    .iter()
                    .zip(x.values.iter().zip(node.values.iter()))
                    .map(|(&u, (&xi, &yi))| u * dfdx(xi, yi))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn tanh(&self) -> Tensor {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Logistic sigmoid. Saturates cleanly: `sigmoid(-1e30)` is exactly 0.
    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    /// Natural logarithm. The caller is responsible for keeping inputs
    /// positive (clamp first); non-positive entries produce non-finite
    /// values that downstream finiteness checks will catch.
    pub fn log(&self) -> Tensor {
        self.unary("log", f64::ln, |x, _| 1.0 / x)
    }

    /// Clamp into `[lo, hi]`. Gradient passes where the input is strictly
    /// inside the interval and is zero where the value was clipped.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        assert!(lo <= hi, "clamp: lo {lo} > hi {hi}");
        self.unary(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    /// Multiply by a constant.
    pub fn scale(&self, c: f64) -> Tensor {
        self.unary("scale", move |x| c * x, move |_, _| c)
    }

    /// Add a constant.
    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    // ------------------------------------------------------------------
    // Elementwise binary ops (with limited broadcasting)
    // ------------------------------------------------------------------

    fn elementwise_shapes(
        op: &'static str,
        lhs: &[usize],
        rhs: &[usize],
    ) -> Result<Broadcast> {
        if lhs == rhs {
            return Ok(Broadcast::Same);
        }
        if numel_of(rhs) == 1 {
            return Ok(Broadcast::Scalar);
        }
        // Row broadcast: [m, k] with [k] or [1, k].
        if lhs.len() == 2 {
            let k = lhs[1];
            if rhs == [k] || rhs == [1, k] {
                return Ok(Broadcast::Row);
            }
        }
        Err(DarcError::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        })
    }

    /// Elementwise addition. Also accepts a single-element right operand
    /// (broadcast everywhere) or a `[k]` / `[1, k]` right operand against a
    /// `[m, k]` left operand (broadcast across rows), which covers bias adds.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        let mode = Tensor::elementwise_shapes("add", &ls, &rs)?;
        let a = self.0.borrow();
        let b = rhs.0.borrow();
        let cols = if ls.len() == 2 { ls[1] } else { ls.first().copied().unwrap_or(1) };
        let values: Vec<f64> = match mode {
            Broadcast::Same => a.values.iter().zip(b.values.iter()).map(|(x, y)| x + y).collect(),
            Broadcast::Scalar => a.values.iter().map(|x| x + b.values[0]).collect(),
            Broadcast::Row => a
                .values
                .iter()
                .enumerate()
                .map(|(i, x)| x + b.values[i % cols])
                .collect(),
        };
        drop(a);
        drop(b);
        Ok(Tensor::op_result(
            "add",
            ls.clone(),
            values,
            vec![self.clone(), rhs.clone()],
            Box::new(move |up, node| {
                let ga = up.to_vec();
                let rb = node.parents[1].0.borrow();
                let gb = match mode {
                    Broadcast::Same => up.to_vec(),
                    Broadcast::Scalar => vec![up.iter().sum()],
                    Broadcast::Row => {
                        let mut g = vec![0.0; rb.values.len()];
                        for (i, &u) in up.iter().enumerate() {
                            g[i % cols] += u;
                        }
                        g
                    }
                };
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Elementwise subtraction; shapes must match exactly.
    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs {
            return Err(DarcError::ShapeMismatch { op: "sub", lhs: ls, rhs: rs });
        }
        let a = self.0.borrow();
        let b = rhs.0.borrow();
        let values: Vec<f64> = a.values.iter().zip(b.values.iter()).map(|(x, y)| x - y).collect();
        drop(a);
        drop(b);
        Ok(Tensor::op_result(
            "sub",
            ls,
            values,
            vec![self.clone(), rhs.clone()],
            Box::new(|up, _| {
                vec![
                    Some(up.to_vec()),
                    Some(up.iter().map(|u| -u).collect()),
                ]
            }),
        ))
    }

    /// Elementwise (Hadamard) product. Shapes must match exactly, or the
    /// right operand may be a single-element tensor.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        let mode = Tensor::elementwise_shapes("mul", &ls, &rs)?;
        if matches!(mode, Broadcast::Row) {
            return Err(DarcError::ShapeMismatch { op: "mul", lhs: ls, rhs: rs });
        }
        let a = self.0.borrow();
        let b = rhs.0.borrow();
        let values: Vec<f64> = match mode {
            Broadcast::Same => a.values.iter().zip(b.values.iter()).map(|(x, y)| x * y).collect(),
            _ => a.values.iter().map(|x| x * b.values[0]).collect(),
        };
        drop(a);
        drop(b);
        Ok(Tensor::op_result(
            "mul",
            ls,
            values,
            vec![self.clone(), rhs.clone()],
            Box::new(move |up, node| {
                let a = node.parents[0].0.borrow();
                let b = node.parents[1].0.borrow();
                match mode {
                    Broadcast::Same => {
                        let ga = up.iter().zip(b.values.iter()).map(|(u, y)| u * y).collect();
                        let gb = up.iter().zip(a.values.iter()).map(|(u, x)| u * x).collect();
                        vec![Some(ga), Some(gb)]
                    }
                    _ => {
                        let ga = up.iter().map(|u| u * b.values[0]).collect();
                        let gb = vec![up.iter().zip(a.values.iter()).map(|(u, x)| u * x).sum()];
                        vec![Some(ga), Some(gb)]
                    }
                }
            }),
        ))
    }

    // ------------------------------------------------------------------
    // Matrix ops
    // ------------------------------------------------------------------

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape();
        match s.len() {
            2 => Ok((s[0], s[1])),
            _ => Err(DarcError::BadShape {
                op,
                detail: "expected a rank-2 tensor".to_string(),
                got: s,
            }),
        }
    }

    /// Matrix product of two rank-2 tensors: `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, ka) = self.dims2("matmul")?;
        let (kb, n) = rhs.dims2("matmul")?;
        if ka != kb {
            return Err(DarcError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, ka],
                rhs: vec![kb, n],
            });
        }
        let a = self.0.borrow();
        let b = rhs.0.borrow();
        let values = mat_mul(&a.values, &b.values, m, ka, n);
        drop(a);
        drop(b);
        Ok(Tensor::op_result(
            "matmul",
            vec![m, n],
            values,
            vec![self.clone(), rhs.clone()],
            Box::new(move |up, node| {
                let a = node.parents[0].0.borrow();
                let b = node.parents[1].0.borrow();
                // dA = up . B^T ; dB = A^T . up
                let bt = mat_transpose(&b.values, ka, n);
                let ga = mat_mul(up, &bt, m, n, ka);
                let at = mat_transpose(&a.values, m, ka);
                let gb = mat_mul(&at, up, ka, m, n);
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let a = self.0.borrow();
        let values = mat_transpose(&a.values, m, n);
        drop(a);
        Ok(Tensor::op_result(
            "transpose",
            vec![n, m],
            values,
            vec![self.clone()],
            Box::new(move |up, _| vec![Some(mat_transpose(up, n, m))]),
        ))
    }

    /// Concatenate rank-2 tensors along `axis` (0 = stack rows, 1 = widen).
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(DarcError::InvalidArgument("concat of zero tensors".into()));
        }
        if axis > 1 {
            return Err(DarcError::InvalidArgument(format!("concat axis {axis} out of range")));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|p| p.dims2("concat"))
            .collect::<Result<_>>()?;
        let fixed = if axis == 0 { dims[0].1 } else { dims[0].0 };
        for (i, &(r, c)) in dims.iter().enumerate() {
            let other = if axis == 0 { c } else { r };
            if other != fixed {
                return Err(DarcError::ShapeMismatch {
                    op: "concat",
                    lhs: vec![dims[0].0, dims[0].1],
                    rhs: vec![dims[i].0, dims[i].1],
                });
            }
            let _ = (r, c);
        }
        let (rows, cols) = if axis == 0 {
            (dims.iter().map(|d| d.0).sum(), fixed)
        } else {
            (fixed, dims.iter().map(|d| d.1).sum())
        };
        let mut values = vec![0.0; rows * cols];
        if axis == 0 {
            let mut row0 = 0;
            for (p, &(r, c)) in parts.iter().zip(dims.iter()) {
                let src = p.0.borrow();
                values[row0 * cols..(row0 + r) * cols].copy_from_slice(&src.values);
                row0 += r;
                let _ = c;
            }
        } else {
            let mut col0 = 0;
            for (p, &(_, c)) in parts.iter().zip(dims.iter()) {
                let src = p.0.borrow();
                for i in 0..rows {
                    values[i * cols + col0..i * cols + col0 + c]
                        .copy_from_slice(&src.values[i * c..(i + 1) * c]);
                }
                col0 += c;
            }
        }
        let parents: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        Ok(Tensor::op_result(
            "concat",
            vec![rows, cols],
            values,
            parents,
            Box::new(move |up, _| {
                let mut grads = Vec::with_capacity(dims.len());
                if axis == 0 {
                    let mut row0 = 0;
                    for &(r, _) in &dims {
                        grads.push(Some(up[row0 * cols..(row0 + r) * cols].to_vec()));
                        row0 += r;
                    }
                } else {
                    let mut col0 = 0;
                    for &(_, c) in &dims {
                        let mut g = vec![0.0; rows * c];
                        for i in 0..rows {
                            g[i * c..(i + 1) * c]
                                .copy_from_slice(&up[i * cols + col0..i * cols + col0 + c]);
                        }
                        grads.push(Some(g));
                        col0 += c;
                    }
                }
                grads
            }),
        ))
    }

    /// Rows `r0..r1` of a rank-2 tensor.
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Tensor> {
        let (m, n) = self.dims2("slice_rows")?;
        if r0 >= r1 || r1 > m {
            return Err(DarcError::InvalidArgument(format!(
                "slice_rows {r0}..{r1} out of range for {m} rows"
            )));
        }
        let a = self.0.borrow();
        let values = a.values[r0 * n..r1 * n].to_vec();
        drop(a);
        Ok(Tensor::op_result(
            "slice_rows",
            vec![r1 - r0, n],
            values,
            vec![self.clone()],
            Box::new(move |up, _| {
                let mut g = vec![0.0; m * n];
                g[r0 * n..r1 * n].copy_from_slice(up);
                vec![Some(g)]
            }),
        ))
    }

    /// Columns `c0..c1` of a rank-2 tensor.
    pub fn slice_cols(&self, c0: usize, c1: usize) -> Result<Tensor> {
        let (m, n) = self.dims2("slice_cols")?;
        if c0 >= c1 || c1 > n {
            return Err(DarcError::InvalidArgument(format!(
                "slice_cols {c0}..{c1} out of range for {n} columns"
            )));
        }
        let w = c1 - c0;
        let a = self.0.borrow();
        let mut values = vec![0.0; m * w];
        for i in 0..m {
            values[i * w..(i + 1) * w].copy_from_slice(&a.values[i * n + c0..i * n + c1]);
        }
        drop(a);
        Ok(Tensor::op_result(
            "slice_cols",
            vec![m, w],
            values,
            vec![self.clone()],
            Box::new(move |up, _| {
                let mut g = vec![0.0; m * n];
                for i in 0..m {
                    g[i * n + c0..i * n + c1].copy_from_slice(&up[i * w..(i + 1) * w]);
                }
                vec![Some(g)]
            }),
        ))
    }

    // ------------------------------------------------------------------
    // Reductions and normalization
    // ------------------------------------------------------------------

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&self) -> Tensor {
        let a = self.0.borrow();
        let s: f64 = a.values.iter().sum();
        let n = a.values.len();
        drop(a);
        Tensor::op_result(
            "sum",
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |up, _| vec![Some(vec![up[0]; n])]),
        )
    }

    /// Mean of all entries, as a `[1]` tensor.
    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Row-wise softmax of a rank-2 tensor (a rank-1 tensor is one row).
    pub fn softmax_rows(&self) -> Tensor {
        let a = self.0.borrow();
        let (rows, cols) = match a.shape.len() {
            2 => (a.shape[0], a.shape[1]),
            _ => (1, a.values.len()),
        };
        let mut values = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &a.values[i * cols..(i + 1) * cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - mx).exp();
                values[i * cols + j] = e;
                z += e;
            }
            for v in values[i * cols..(i + 1) * cols].iter_mut() {
                *v /= z;
            }
        }
        let shape = a.shape.clone();
        drop(a);
        Tensor::op_result(
            "softmax",
            shape,
            values,
            vec![self.clone()],
            Box::new(move |up, node| {
                // dx = y * (up - sum(up * y)) per row
                let y = &node.values;
                let mut g = vec![0.0; y.len()];
                for i in 0..rows {
                    let base = i * cols;
                    let dot: f64 = (0..cols).map(|j| up[base + j] * y[base + j]).sum();
                    for j in 0..cols {
                        g[base + j] = y[base + j] * (up[base + j] - dot);
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Layer normalization across the last axis of a rank-2 tensor, with
    /// trainable gain and bias of shape `[cols]`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let (rows, cols) = self.dims2("layer_norm")?;
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            let s = t.shape();
            if s != [cols] {
                return Err(DarcError::BadShape {
                    op: "layer_norm",
                    detail: format!("{name} must have shape [{cols}]"),
                    got: s,
                });
            }
        }
        let a = self.0.borrow();
        let g = gamma.0.borrow();
        let b = beta.0.borrow();
        let mut values = vec![0.0; rows * cols];
        // Cache per-row statistics for the backward pass.
        let mut inv_sigma = vec![0.0; rows];
        let mut xhat = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &a.values[i * cols..(i + 1) * cols];
            let mu = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_sigma[i] = is;
            for j in 0..cols {
                let xh = (row[j] - mu) * is;
                xhat[i * cols + j] = xh;
                values[i * cols + j] = g.values[j] * xh + b.values[j];
            }
        }
        drop(a);
        drop(g);
        drop(b);
        Ok(Tensor::op_result(
            "layer_norm",
            vec![rows, cols],
            values,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |up, node| {
                let g = node.parents[1].0.borrow();
                let mut gx = vec![0.0; rows * cols];
                let mut gg = vec![0.0; cols];
                let mut gb = vec![0.0; cols];
                for i in 0..rows {
                    let base = i * cols;
                    // dxhat = up * gamma
                    let dxhat: Vec<f64> =
                        (0..cols).map(|j| up[base + j] * g.values[j]).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / cols as f64;
                    let mean_dxhat_xhat = (0..cols)
                        .map(|j| dxhat[j] * xhat[base + j])
                        .sum::<f64>()
                        / cols as f64;
                    for j in 0..cols {
                        gx[base + j] = inv_sigma[i]
                            * (dxhat[j] - mean_dxhat - xhat[base + j] * mean_dxhat_xhat);
                        gg[j] += up[base + j] * xhat[base + j];
                        gb[j] += up[base + j];
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        ))
    }

    // ------------------------------------------------------------------
    // Masked merge
    // ------------------------------------------------------------------

    /// Entry-wise selection `out = mask == 1 ? observed : self`.
    ///
    /// Observed entries are copied bit-for-bit from `observed`; no arithmetic
    /// touches them. Gradients flow into `self` only where `mask == 0` and
    /// into `observed` only where `mask == 1`; the mask itself never receives
    /// gradients. All three tensors must share a shape, and the mask must be
    /// exactly 0/1.
    pub fn masked_merge(&self, observed: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let s = self.shape();
        for (name, t) in [("observed", observed), ("mask", mask)] {
            let ts = t.shape();
            if ts != s {
                let _ = name;
                return Err(DarcError::ShapeMismatch { op: "masked_merge", lhs: s, rhs: ts });
            }
        }
        let a = self.0.borrow();
        let o = observed.0.borrow();
        let m = mask.0.borrow();
        if m.values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(DarcError::InvalidArgument(
                "masked_merge: mask entries must be exactly 0 or 1".into(),
            ));
        }
        let values: Vec<f64> = a
            .values
            .iter()
            .zip(o.values.iter().zip(m.values.iter()))
            .map(|(&x, (&obs, &mk))| if mk == 1.0 { obs } else { x })
            .collect();
        drop(a);
        drop(o);
        drop(m);
        Ok(Tensor::op_result(
            "masked_merge",
            s,
            values,
            vec![self.clone(), observed.clone(), mask.clone()],
            Box::new(|up, node| {
                let m = node.parents[2].0.borrow();
                let ga = up
                    .iter()
                    .zip(m.values.iter())
                    .map(|(&u, &mk)| if mk == 1.0 { 0.0 } else { u })
                    .collect();
                let go = up
                    .iter()
                    .zip(m.values.iter())
                    .map(|(&u, &mk)| if mk == 1.0 { u } else { 0.0 })
                    .collect();
                vec![Some(ga), Some(go), None]
            }),
        ))
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Accumulates `d loss / d t` into `t.grad` for every tensor `t` on the
    /// recorded graph below this loss. Calling `backward` again without
    /// `zero_grad` adds the new gradients on top of the old ones. Tensors not
    /// reachable from this loss keep their gradients untouched (all-zero if
    /// never touched).
    pub fn backward(&self) -> Result<()> {
        {
            let n = self.0.borrow();
            if n.values.len() != 1 {
                return Err(DarcError::NonScalarLoss(n.shape.clone()));
            }
            if !n.requires_grad {
                return Err(DarcError::DetachedGraph);
            }
        }

        // Post-order over the recorded graph (parents before consumers),
        // restricted to tensors that participate in gradients.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<*const RefCell<Node>> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            let ptr = Rc::as_ptr(&t.0);
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(ptr) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.0.borrow().parents.iter() {
                if p.requires_grad() && !visited.contains(&Rc::as_ptr(&p.0)) {
                    stack.push((p.clone(), false));
                }
            }
        }

        // Per-call upstream gradients, kept apart from the persistent `grad`
        // buffers so repeated backward calls accumulate correctly.
        let mut local: HashMap<*const RefCell<Node>, Vec<f64>> = HashMap::new();
        local.insert(Rc::as_ptr(&self.0), vec![1.0]);

        for t in order.iter().rev() {
            let ptr = Rc::as_ptr(&t.0);
            let Some(up) = local.get(&ptr).cloned() else { continue };
            let node = t.0.borrow();
            if let Some(vjp) = node.vjp.as_ref() {
                let contributions = vjp(&up, &node);
                debug_assert_eq!(contributions.len(), node.parents.len(), "{}: vjp arity", node.op);
                let parents: Vec<Tensor> = node.parents.clone();
                drop(node);
                for (parent, contribution) in parents.iter().zip(contributions) {
                    let Some(c) = contribution else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    let pptr = Rc::as_ptr(&parent.0);
                    let entry = local
                        .entry(pptr)
                        .or_insert_with(|| vec![0.0; parent.numel()]);
                    debug_assert_eq!(entry.len(), c.len());
                    for (e, ci) in entry.iter_mut().zip(c) {
                        *e += ci;
                    }
                }
            }
        }

        // Fold this pass's gradients into the persistent buffers.
        for t in order.iter() {
            let ptr = Rc::as_ptr(&t.0);
            if let Some(g) = local.get(&ptr) {
                let mut node = t.0.borrow_mut();
                for (dst, src) in node.grad.iter_mut().zip(g.iter()) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

/// Row-major `[m, k] x [k, n]` product on raw slices.
fn mat_mul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += ail * bv;
            }
        }
    }
    out
}

/// Row-major transpose on raw slices.
fn mat_transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Finite-difference gradient checking, independent of the backward pass.
///
/// These helpers evaluate a closure at perturbed inputs and never touch the
/// recorded graph, so they serve as an external oracle for `backward`.
pub mod gradcheck {
    /// Central finite-difference gradient of `f` at `x`.
    pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
        let mut point = x.to_vec();
        let mut grad = vec![0.0; x.len()];
        for i in 0..x.len() {
            let orig = point[i];
            point[i] = orig + step;
            let fp = f(&point);
            point[i] = orig - step;
            let fm = f(&point);
            point[i] = orig;
            grad[i] = (fp - fm) / (2.0 * step);
        }
        grad
    }

    /// Largest relative discrepancy between two gradients, where the scale
    /// floor of 1 turns the comparison absolute for tiny entries.
    pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b.iter())
            .map(|(&x, &y)| (x - y).abs() / f64::max(1.0, f64::max(x.abs(), y.abs())))
            .fold(0.0, f64::max)
    }
}
