//! Learned imputation of missing entries.
//!
//! [`ImputerNet`] maps a zero-filled data batch plus its observation mask to
//! a full matrix of imputed values; [`combine`] then overwrites the observed
//! positions with the original data, bit-for-bit, so only genuinely missing
//! cells ever carry model output. [`pretrain_adversarial`] warm-starts the
//! imputer against a discriminator that tries to tell observed from imputed
//! entries (with a hint mask revealing most of the truth), plus a
//! reconstruction term on observed cells.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::dataset::MaskedDataset;
use crate::error::{DarcError, Result};
use crate::opt::{zero_grads, OptimKind, Optimizer};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Draw a weight matrix with uniform Xavier/Glorot initialization.
pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.uniform(-limit, limit)).collect();
    Tensor::param(&[rows, cols], values)
}

pub(crate) fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::param(shape, vec![0.0; shape.iter().product()])
}

/// Three-layer imputation network `2d -> d -> d -> d`.
///
/// Input is the zero-filled batch concatenated with its mask. The head is a
/// sigmoid rescaled per column into the observed `[min, max]` band recorded
/// on the training dataset, so imputations always land in a plausible range
/// (with all-zero parameters, at the midpoint of that band).
pub struct ImputerNet {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    w3: Tensor,
    b3: Tensor,
    col_lo: Vec<f64>,
    col_hi: Vec<f64>,
}

impl ImputerNet {
    pub fn init(d: usize, col_range: &[(f64, f64)], rng: &mut RngStream) -> Self {
        assert_eq!(col_range.len(), d, "col_range must have one entry per column");
        ImputerNet {
            w1: xavier(2 * d, d, rng),
            b1: zeros_param(&[d]),
            w2: xavier(d, d, rng),
            b2: zeros_param(&[d]),
            w3: xavier(d, d, rng),
            b3: zeros_param(&[d]),
            col_lo: col_range.iter().map(|r| r.0).collect(),
            col_hi: col_range.iter().map(|r| r.1).collect(),
        }
    }

    /// All-zero parameters (tests exercise the rescaling head in isolation).
    pub fn zeroed(d: usize, col_range: &[(f64, f64)]) -> Self {
        ImputerNet {
            w1: zeros_param(&[2 * d, d]),
            b1: zeros_param(&[d]),
            w2: zeros_param(&[d, d]),
            b2: zeros_param(&[d]),
            w3: zeros_param(&[d, d]),
            b3: zeros_param(&[d]),
            col_lo: col_range.iter().map(|r| r.0).collect(),
            col_hi: col_range.iter().map(|r| r.1).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.col_lo.len()
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![
            self.w1.clone(),
            self.b1.clone(),
            self.w2.clone(),
            self.b2.clone(),
            self.w3.clone(),
            self.b3.clone(),
        ]
    }

    /// Imputed matrix for a zero-filled batch and its mask, shape `n x d`.
    /// Differentiable with respect to the network parameters.
    pub fn forward(&self, x_filled: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let d = self.d();
        let xs = x_filled.shape();
        if xs.len() != 2 || xs[1] != d {
            return Err(DarcError::BadShape {
                op: "imputer_forward",
                detail: format!("expected [n, {d}] input"),
                got: xs,
            });
        }
        if mask.shape() != x_filled.shape() {
            return Err(DarcError::ShapeMismatch {
                op: "imputer_forward",
                lhs: x_filled.shape(),
                rhs: mask.shape(),
            });
        }
        let n = xs[0];
        let joint = Tensor::concat(&[x_filled, mask], 1)?;
        let h1 = joint.matmul(&self.w1)?.add(&self.b1)?.relu();
        let h2 = h1.matmul(&self.w2)?.add(&self.b2)?.relu();
        let squashed = h2.matmul(&self.w3)?.add(&self.b3)?.sigmoid();
        // Affine rescale into the per-column observed band.
        let lo_tile = Tensor::constant(&[n, d], tile_rows(&self.col_lo, n));
        let span: Vec<f64> = self
            .col_lo
            .iter()
            .zip(self.col_hi.iter())
            .map(|(lo, hi)| hi - lo)
            .collect();
        let span_tile = Tensor::constant(&[n, d], tile_rows(&span, n));
        squashed.mul(&span_tile)?.add(&lo_tile)
    }

    /// Impute a whole dataset (zero-filled) and return plain values.
    pub fn impute_dataset(&self, ds: &MaskedDataset) -> Result<DMatrix<f64>> {
        let x = Tensor::from_matrix(&ds.x_filled(0.0));
        let m = Tensor::from_matrix(ds.mask());
        Ok(self.forward(&x, &m)?.to_matrix())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ckpt = Checkpoint::new(
            "imputer",
            serde_json::json!({ "col_lo": self.col_lo, "col_hi": self.col_hi }),
        );
        ckpt.push("w1", &self.w1);
        ckpt.push("b1", &self.b1);
        ckpt.push("w2", &self.w2);
        ckpt.push("b2", &self.b2);
        ckpt.push("w3", &self.w3);
        ckpt.push("b3", &self.b3);
        ckpt.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path, "imputer")?;
        #[derive(Deserialize)]
        struct Extra {
            col_lo: Vec<f64>,
            col_hi: Vec<f64>,
        }
        let extra: Extra = serde_json::from_value(ckpt.extra.clone())?;
        let d = extra.col_lo.len();
        if extra.col_hi.len() != d || d == 0 {
            return Err(DarcError::BadCheckpoint("bad column bounds".into()));
        }
        Ok(ImputerNet {
            w1: ckpt.param("w1", &[2 * d, d])?,
            b1: ckpt.param("b1", &[d])?,
            w2: ckpt.param("w2", &[d, d])?,
            b2: ckpt.param("b2", &[d])?,
            w3: ckpt.param("w3", &[d, d])?,
            b3: ckpt.param("b3", &[d])?,
            col_lo: extra.col_lo,
            col_hi: extra.col_hi,
        })
    }
}

fn tile_rows(row: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(row.len() * n);
    for _ in 0..n {
        out.extend_from_slice(row);
    }
    out
}

/// Overwrite observed positions of `x_im` with the original values:
/// `out = mask * observed + (1 - mask) * x_im`, implemented as selection so
/// observed entries are copied bit-for-bit (no arithmetic on them).
/// Gradients flow into `x_im` only at missing positions.
pub fn combine(x_im: &Tensor, x_observed_filled: &Tensor, mask: &Tensor) -> Result<Tensor> {
    x_im.masked_merge(x_observed_filled, mask)
}

/// Matrix-level [`combine`] for a whole dataset.
pub fn combine_dataset(ds: &MaskedDataset, x_im: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x_im.nrows() != ds.n() || x_im.ncols() != ds.d() {
        return Err(DarcError::ShapeMismatch {
            op: "combine",
            lhs: vec![ds.n(), ds.d()],
            rhs: vec![x_im.nrows(), x_im.ncols()],
        });
    }
    let mut out = x_im.clone();
    for i in 0..ds.n() {
        for j in 0..ds.d() {
            if let Some(v) = ds.observed(i, j) {
                out[(i, j)] = v;
            }
        }
    }
    Ok(out)
}

/// Root-mean-square error over masked positions only. Needs the ground-truth
/// full matrix, so this is a synthetic-data diagnostic.
pub fn imputation_rmse(
    ds: &MaskedDataset,
    x_true: &DMatrix<f64>,
    x_in: &DMatrix<f64>,
) -> Result<f64> {
    if x_true.nrows() != ds.n() || x_true.ncols() != ds.d() {
        return Err(DarcError::ShapeMismatch {
            op: "imputation_rmse",
            lhs: vec![ds.n(), ds.d()],
            rhs: vec![x_true.nrows(), x_true.ncols()],
        });
    }
    if x_in.nrows() != ds.n() || x_in.ncols() != ds.d() {
        return Err(DarcError::ShapeMismatch {
            op: "imputation_rmse",
            lhs: vec![ds.n(), ds.d()],
            rhs: vec![x_in.nrows(), x_in.ncols()],
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..ds.n() {
        for j in 0..ds.d() {
            if !ds.is_observed(i, j) {
                let e = x_in[(i, j)] - x_true[(i, j)];
                sum += e * e;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(DarcError::NoMaskedEntries);
    }
    Ok((sum / count as f64).sqrt())
}

/// Adversarial pretraining settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Fraction of entries whose true observed/missing status is revealed to
    /// the discriminator through the hint matrix.
    pub hint_rate: f64,
    /// Weight of the observed-entry reconstruction term in the generator
    /// loss.
    pub alpha: f64,
    pub batch_size: usize,
    /// Fill missing inputs with small uniform noise instead of zeros so the
    /// generator cannot key on an exact sentinel value.
    pub noise_fill: bool,
    pub lr: f64,
    /// Emit a log row every this many epochs (and on the final epoch).
    pub log_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 2000,
            hint_rate: 0.9,
            alpha: 10.0,
            batch_size: 64,
            noise_fill: true,
            lr: 1e-3,
            log_every: 100,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.hint_rate) {
            problems.push(format!("hint_rate must be in [0, 1], got {}", self.hint_rate));
        }
        if self.alpha < 0.0 {
            problems.push(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) {
            problems.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.log_every == 0 {
            problems.push("log_every must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DarcError::InvalidArgument(problems.join("; ")))
        }
    }
}

/// One diagnostic row from pretraining.
#[derive(Debug, Clone, Serialize)]
pub struct PretrainLogRow {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Fraction of entries the discriminator classifies correctly at the 0.5
    /// threshold. Drifts toward chance on masked entries as the imputer
    /// improves; logged, not asserted.
    pub disc_accuracy: f64,
}

/// Mirror-architecture discriminator: `2d -> d -> d -> d` with a per-entry
/// sigmoid head estimating "this entry was observed".
struct Discriminator {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    w3: Tensor,
    b3: Tensor,
}

impl Discriminator {
    fn init(d: usize, rng: &mut RngStream) -> Self {
        Discriminator {
            w1: xavier(2 * d, d, rng),
            b1: zeros_param(&[d]),
            w2: xavier(d, d, rng),
            b2: zeros_param(&[d]),
            w3: xavier(d, d, rng),
            b3: zeros_param(&[d]),
        }
    }

    fn params(&self) -> Vec<Tensor> {
        vec![
            self.w1.clone(),
            self.b1.clone(),
            self.w2.clone(),
            self.b2.clone(),
            self.w3.clone(),
            self.b3.clone(),
        ]
    }

    fn forward(&self, x_hat: &Tensor, hint: &Tensor) -> Result<Tensor> {
        let joint = Tensor::concat(&[x_hat, hint], 1)?;
        let h1 = joint.matmul(&self.w1)?.add(&self.b1)?.relu();
        let h2 = h1.matmul(&self.w2)?.add(&self.b2)?.relu();
        h2.matmul(&self.w3)?.add(&self.b3).map(|t| t.sigmoid())
    }
}

const PROB_FLOOR: f64 = 1e-7;

/// Adversarially pretrain an imputer on `ds`.
///
/// The generator is initialized from `rng.derive("imputer-init")` and, with
/// `epochs == 0`, returned untouched — so a zero-epoch call is exactly the
/// initialization. Each epoch updates the discriminator on a detached
/// generator output, then the generator on the adversarial + reconstruction
/// loss. Both sides use Adam on globally clipped gradients.
pub fn pretrain_adversarial(
    ds: &MaskedDataset,
    cfg: &PretrainConfig,
    rng: &mut RngStream,
) -> Result<(ImputerNet, Vec<PretrainLogRow>)> {
    cfg.validate()?;
    let d = ds.d();
    let batch = cfg.batch_size.min(ds.n());
    let generator = ImputerNet::init(d, ds.col_range(), &mut rng.derive("imputer-init"));
    if cfg.epochs == 0 {
        return Ok((generator, Vec::new()));
    }
    let disc = Discriminator::init(d, &mut rng.derive("disc-init"));
    let mut batch_rng = rng.derive("batches");
    let mut hint_rng = rng.derive("hints");
    let mut noise_rng = rng.derive("noise-fill");
    let mut opt_g = Optimizer::new(OptimKind::Adam, cfg.lr, 5.0);
    let mut opt_d = Optimizer::new(OptimKind::Adam, cfg.lr, 5.0);
    let mut log = Vec::new();

    for epoch in 0..cfg.epochs {
        let idx = batch_rng.sample_indices(ds.n(), batch);
        let (mut xb, mb) = ds.batch(&idx, 0.0);
        if cfg.noise_fill {
            for i in 0..xb.nrows() {
                for j in 0..xb.ncols() {
                    if mb[(i, j)] == 0.0 {
                        xb[(i, j)] = noise_rng.uniform(0.0, 0.01);
                    }
                }
            }
        }
        let nb = idx.len();
        let total = (nb * d) as f64;
        let observed_count: f64 = mb.iter().sum();
        let missing_count = total - observed_count;

        let xb_t = Tensor::from_matrix(&xb);
        let mb_t = Tensor::from_matrix(&mb);
        // Hint matrix: reveal true status on a hint_rate fraction, 0.5 on
        // the rest.
        let hint = DMatrix::from_fn(nb, d, |i, j| {
            if hint_rng.bernoulli(cfg.hint_rate) {
                mb[(i, j)]
            } else {
                0.5
            }
        });
        let hint_t = Tensor::from_matrix(&hint);

        let x_im = generator.forward(&xb_t, &mb_t)?;
        let x_hat = combine(&x_im, &xb_t, &mb_t)?;

        // Discriminator update on a detached completion.
        let d_prob = disc
            .forward(&x_hat.detach(), &hint_t)?
            .clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let log_p = d_prob.log();
        let log_1mp = d_prob.scale(-1.0).add_scalar(1.0).log();
        let one_minus_m = mb_t.scale(-1.0).add_scalar(1.0);
        let d_loss = mb_t
            .mul(&log_p)?
            .add(&one_minus_m.mul(&log_1mp)?)?
            .sum()
            .scale(-1.0 / total);
        d_loss.backward()?;
        let d_params = disc.params();
        opt_d.step(&d_params);
        zero_grads(&d_params);

        // Generator update through a fresh discriminator pass.
        let g_prob = disc
            .forward(&x_hat, &hint_t)?
            .clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let fool = one_minus_m
            .mul(&g_prob.log())?
            .sum()
            .scale(-1.0 / missing_count.max(1.0));
        let diff = xb_t.sub(&x_im)?;
        let recon = mb_t
            .mul(&diff.mul(&diff)?)?
            .sum()
            .scale(1.0 / observed_count.max(1.0));
        let g_loss = fool.add(&recon.scale(cfg.alpha))?;
        g_loss.backward()?;
        let g_params = generator.params();
        opt_g.step(&g_params);
        // The generator loss also back-propagated into the discriminator;
        // drop those gradients without applying them.
        zero_grads(&g_params);
        zero_grads(&d_params);

        let d_loss_v = d_loss.value();
        let g_loss_v = g_loss.value();
        if !d_loss_v.is_finite() || !g_loss_v.is_finite() {
            return Err(DarcError::NonFinite {
                what: "pretraining loss".into(),
                epoch: Some(epoch),
            });
        }
        if epoch % cfg.log_every == 0 || epoch + 1 == cfg.epochs {
            let probs = d_prob.values();
            let mask_flat = mb_t.values();
            let correct = probs
                .iter()
                .zip(mask_flat.iter())
                .filter(|(&p, &m)| (p > 0.5) == (m == 1.0))
                .count();
            log.push(PretrainLogRow {
                epoch,
                d_loss: d_loss_v,
                g_loss: g_loss_v,
                disc_accuracy: correct as f64 / total,
            });
        }
    }
    Ok((generator, log))
}
