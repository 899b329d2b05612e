//! Gradient-descent optimizers with global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Which update rule to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    /// Plain gradient descent on clipped gradients.
    Sgd,
    /// Adam on clipped gradients (beta1 = 0.9, beta2 = 0.999).
    Adam,
}

/// Optimizer over a fixed group of parameter tensors.
///
/// Gradients are clipped by their global L2 norm across the whole group
/// before the update. The same `Optimizer` must be stepped with the same
/// parameter list every time (Adam keeps per-entry moment state).
pub struct Optimizer {
    kind: OptimKind,
    lr: f64,
    clip: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    /// `clip <= 0` disables clipping.
    pub fn new(kind: OptimKind, lr: f64, clip: f64) -> Self {
        Optimizer { kind, lr, clip, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Apply one update from the gradients currently stored on `params`.
    /// Gradients are left untouched; call [`zero_grads`] afterwards.
    pub fn step(&mut self, params: &[Tensor]) {
        if self.m.is_empty() && self.kind == OptimKind::Adam {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        let norm_sq: f64 = params.iter().map(|p| p.grad_norm_sq()).sum();
        let norm = norm_sq.sqrt();
        let scale = if self.clip > 0.0 && norm > self.clip {
            self.clip / norm
        } else {
            1.0
        };
        self.t += 1;
        match self.kind {
            OptimKind::Sgd => {
                for p in params {
                    let lr = self.lr;
                    p.update_values(|vals, grads| {
                        for (w, g) in vals.iter_mut().zip(grads.iter()) {
                            *w -= lr * g * scale;
                        }
                    });
                }
            }
            OptimKind::Adam => {
                assert_eq!(self.m.len(), params.len(), "optimizer reused with a different parameter group");
                let bc1 = 1.0 - BETA1.powi(self.t as i32);
                let bc2 = 1.0 - BETA2.powi(self.t as i32);
                for (i, p) in params.iter().enumerate() {
                    let lr = self.lr;
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    p.update_values(|vals, grads| {
                        for j in 0..vals.len() {
                            let g = grads[j] * scale;
                            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                            let mhat = m[j] / bc1;
                            let vhat = v[j] / bc2;
                            vals[j] -= lr * mhat / (vhat.sqrt() + EPS);
                        }
                    });
                }
            }
        }
    }
}

/// Zero the gradient buffers of a parameter group.
pub fn zero_grads(params: &[Tensor]) {
    for p in params {
        p.zero_grad();
    }
}
