//! Graph policy: column encoder, pairwise edge decoder, and Bernoulli graph
//! sampling.
//!
//! Each data column becomes one token (its batch vector), so the encoder's
//! self-attention mixes information across variables while staying
//! permutation-equivariant — there are no positional encodings, and
//! reordering columns simply reorders the output features. A bilinear
//! decoder turns the per-column features into a logit for every ordered
//! pair, with the diagonal pinned to a huge negative constant so self-loops
//! have probability exactly zero.

use nalgebra::DMatrix;

use crate::checkpoint::Checkpoint;
use crate::error::{DarcError, Result};
use crate::imputer::{xavier, zeros_param};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use std::path::Path;

/// Logit pinned to the diagonal; `sigmoid(DIAG_LOGIT)` underflows to exactly
/// zero in `f64`, so self-loops cannot be sampled.
pub const DIAG_LOGIT: f64 = -1e30;

/// Probabilities are clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]` before any
/// logarithm so log-probabilities and entropies stay finite even for
/// saturated logits.
pub const PROB_FLOOR: f64 = 1e-7;

/// Encoder hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    /// Rows per batch; the per-column token length, fixed at construction.
    pub batch_size: usize,
    /// Feature width `k` of each encoded column.
    pub feat_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Hidden width of the position-wise feed-forward block.
    pub ff_dim: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if self.feat_dim == 0 {
            problems.push("feat_dim must be positive".to_string());
        }
        if self.heads == 0 {
            problems.push("heads must be positive".to_string());
        } else if self.feat_dim % self.heads != 0 {
            problems.push(format!(
                "feat_dim {} must be divisible by heads {}",
                self.feat_dim, self.heads
            ));
        }
        if self.ff_dim == 0 {
            problems.push("ff_dim must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DarcError::InvalidArgument(problems.join("; ")))
        }
    }
}

struct EncoderLayer {
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    ln1_gain: Tensor,
    ln1_bias: Tensor,
    ff1_w: Tensor,
    ff1_b: Tensor,
    ff2_w: Tensor,
    ff2_b: Tensor,
    ln2_gain: Tensor,
    ln2_bias: Tensor,
}

impl EncoderLayer {
    fn init(k: usize, ff: usize, rng: &mut RngStream) -> Self {
        EncoderLayer {
            wq: xavier(k, k, rng),
            bq: zeros_param(&[k]),
            wk: xavier(k, k, rng),
            bk: zeros_param(&[k]),
            wv: xavier(k, k, rng),
            bv: zeros_param(&[k]),
            wo: xavier(k, k, rng),
            bo: zeros_param(&[k]),
            ln1_gain: Tensor::param(&[k], vec![1.0; k]),
            ln1_bias: zeros_param(&[k]),
            ff1_w: xavier(k, ff, rng),
            ff1_b: zeros_param(&[ff]),
            ff2_w: xavier(ff, k, rng),
            ff2_b: zeros_param(&[k]),
            ln2_gain: Tensor::param(&[k], vec![1.0; k]),
            ln2_bias: zeros_param(&[k]),
        }
    }

    fn params(&self) -> Vec<Tensor> {
        vec![
            self.wq.clone(),
            self.bq.clone(),
            self.wk.clone(),
            self.bk.clone(),
            self.wv.clone(),
            self.bv.clone(),
            self.wo.clone(),
            self.bo.clone(),
            self.ln1_gain.clone(),
            self.ln1_bias.clone(),
            self.ff1_w.clone(),
            self.ff1_b.clone(),
            self.ff2_w.clone(),
            self.ff2_b.clone(),
            self.ln2_gain.clone(),
            self.ln2_bias.clone(),
        ]
    }

    fn forward(&self, h: &Tensor, heads: usize) -> Result<Tensor> {
        let k = h.shape()[1];
        let dk = k / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let q = h.matmul(&self.wq)?.add(&self.bq)?;
        let key = h.matmul(&self.wk)?.add(&self.bk)?;
        let v = h.matmul(&self.wv)?.add(&self.bv)?;
        let mut head_outputs = Vec::with_capacity(heads);
        for i in 0..heads {
            let (c0, c1) = (i * dk, (i + 1) * dk);
            let qi = q.slice_cols(c0, c1)?;
            let ki = key.slice_cols(c0, c1)?;
            let vi = v.slice_cols(c0, c1)?;
            let scores = qi.matmul(&ki.transpose()?)?.scale(scale);
            let attn = scores.softmax_rows();
            head_outputs.push(attn.matmul(&vi)?);
        }
        let refs: Vec<&Tensor> = head_outputs.iter().collect();
        let ctx = Tensor::concat(&refs, 1)?;
        let mixed = ctx.matmul(&self.wo)?.add(&self.bo)?;
        let h1 = h.add(&mixed)?.layer_norm(&self.ln1_gain, &self.ln1_bias, 1e-5)?;
        let ff = h1
            .matmul(&self.ff1_w)?
            .add(&self.ff1_b)?
            .relu()
            .matmul(&self.ff2_w)?
            .add(&self.ff2_b)?;
        h1.add(&ff)?.layer_norm(&self.ln2_gain, &self.ln2_bias, 1e-5)
    }
}

/// Self-attention encoder over column tokens: maps an `n x d` batch to a
/// `d x k` feature matrix, one row per column.
pub struct FeatureEncoder {
    cfg: EncoderConfig,
    proj_w: Tensor,
    proj_b: Tensor,
    layers: Vec<EncoderLayer>,
}

impl FeatureEncoder {
    pub fn init(cfg: EncoderConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let proj_w = xavier(cfg.batch_size, cfg.feat_dim, rng);
        let proj_b = zeros_param(&[cfg.feat_dim]);
        let layers = (0..cfg.layers)
            .map(|_| EncoderLayer::init(cfg.feat_dim, cfg.ff_dim, rng))
            .collect();
        Ok(FeatureEncoder { cfg, proj_w, proj_b, layers })
    }

    pub fn config(&self) -> EncoderConfig {
        self.cfg
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut out = vec![self.proj_w.clone(), self.proj_b.clone()];
        for layer in &self.layers {
            out.extend(layer.params());
        }
        out
    }

    /// Encode a completed batch. `x_in` must have exactly the configured
    /// number of rows (the projection is over the batch axis).
    pub fn forward(&self, x_in: &Tensor) -> Result<Tensor> {
        let shape = x_in.shape();
        if shape.len() != 2 || shape[0] != self.cfg.batch_size {
            return Err(DarcError::BadShape {
                op: "encoder_forward",
                detail: format!("expected [{}, d] batch", self.cfg.batch_size),
                got: shape,
            });
        }
        // One token per column: tokens = x_in^T, shape [d, n].
        let tokens = x_in.transpose()?;
        let mut h = tokens.matmul(&self.proj_w)?.add(&self.proj_b)?;
        for layer in &self.layers {
            h = layer.forward(&h, self.cfg.heads)?;
        }
        Ok(h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ckpt = Checkpoint::new(
            "encoder",
            serde_json::json!({
                "batch_size": self.cfg.batch_size,
                "feat_dim": self.cfg.feat_dim,
                "layers": self.cfg.layers,
                "heads": self.cfg.heads,
                "ff_dim": self.cfg.ff_dim,
            }),
        );
        ckpt.push("proj_w", &self.proj_w);
        ckpt.push("proj_b", &self.proj_b);
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer_tensor_names(layer) {
                ckpt.push(&format!("layer{i}.{name}"), t);
            }
        }
        ckpt.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path, "encoder")?;
        let cfg = EncoderConfig {
            batch_size: extra_usize(&ckpt, "batch_size")?,
            feat_dim: extra_usize(&ckpt, "feat_dim")?,
            layers: extra_usize(&ckpt, "layers")?,
            heads: extra_usize(&ckpt, "heads")?,
            ff_dim: extra_usize(&ckpt, "ff_dim")?,
        };
        cfg.validate()?;
        let (n, k, ff) = (cfg.batch_size, cfg.feat_dim, cfg.ff_dim);
        let mut layers = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let p = |name: &str, shape: &[usize]| ckpt.param(&format!("layer{i}.{name}"), shape);
            layers.push(EncoderLayer {
                wq: p("wq", &[k, k])?,
                bq: p("bq", &[k])?,
                wk: p("wk", &[k, k])?,
                bk: p("bk", &[k])?,
                wv: p("wv", &[k, k])?,
                bv: p("bv", &[k])?,
                wo: p("wo", &[k, k])?,
                bo: p("bo", &[k])?,
                ln1_gain: p("ln1_gain", &[k])?,
                ln1_bias: p("ln1_bias", &[k])?,
                ff1_w: p("ff1_w", &[k, ff])?,
                ff1_b: p("ff1_b", &[ff])?,
                ff2_w: p("ff2_w", &[ff, k])?,
                ff2_b: p("ff2_b", &[k])?,
                ln2_gain: p("ln2_gain", &[k])?,
                ln2_bias: p("ln2_bias", &[k])?,
            });
        }
        Ok(FeatureEncoder {
            cfg,
            proj_w: ckpt.param("proj_w", &[n, k])?,
            proj_b: ckpt.param("proj_b", &[k])?,
            layers,
        })
    }
}

fn layer_tensor_names(layer: &EncoderLayer) -> Vec<(&'static str, &Tensor)> {
    vec![
        ("wq", &layer.wq),
        ("bq", &layer.bq),
        ("wk", &layer.wk),
        ("bk", &layer.bk),
        ("wv", &layer.wv),
        ("bv", &layer.bv),
        ("wo", &layer.wo),
        ("bo", &layer.bo),
        ("ln1_gain", &layer.ln1_gain),
        ("ln1_bias", &layer.ln1_bias),
        ("ff1_w", &layer.ff1_w),
        ("ff1_b", &layer.ff1_b),
        ("ff2_w", &layer.ff2_w),
        ("ff2_b", &layer.ff2_b),
        ("ln2_gain", &layer.ln2_gain),
        ("ln2_bias", &layer.ln2_bias),
    ]
}

fn extra_usize(ckpt: &Checkpoint, key: &str) -> Result<usize> {
    ckpt.extra
        .get(key)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| DarcError::BadCheckpoint(format!("missing extra field {key:?}")))
}

/// Bilinear edge decoder: `logit(i -> j) = u . tanh(W1 f_i + W2 f_j) + b`.
pub struct EdgeDecoder {
    /// `[hidden, k]` map applied to the source feature.
    w1: Tensor,
    /// `[hidden, k]` map applied to the target feature.
    w2: Tensor,
    /// `[hidden, 1]` read-out.
    u: Tensor,
    /// Shared trainable bias added to every off-diagonal logit. Initializing
    /// it negative biases early sampling toward sparse graphs, which keeps
    /// large-d searches out of the dense-cyclic regime.
    bias: Tensor,
}

impl EdgeDecoder {
    pub fn init(feat_dim: usize, hidden: usize, bias_init: f64, rng: &mut RngStream) -> Self {
        EdgeDecoder {
            w1: xavier(hidden, feat_dim, rng),
            w2: xavier(hidden, feat_dim, rng),
            u: xavier(hidden, 1, rng),
            bias: Tensor::param(&[1], vec![bias_init]),
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.w1.clone(), self.w2.clone(), self.u.clone(), self.bias.clone()]
    }

    /// Edge logits for a `d x k` feature matrix: a `d x d` tensor with the
    /// diagonal pinned to [`DIAG_LOGIT`].
    pub fn forward(&self, feat: &Tensor) -> Result<Tensor> {
        let shape = feat.shape();
        if shape.len() != 2 {
            return Err(DarcError::BadShape {
                op: "decoder_forward",
                detail: "expected [d, k] features".to_string(),
                got: shape,
            });
        }
        let d = shape[0];
        if d < 2 {
            return Err(DarcError::BadShape {
                op: "decoder_forward",
                detail: "need at least 2 columns to score edges".to_string(),
                got: shape,
            });
        }
        let src = feat.matmul(&self.w1.transpose()?)?; // [d, hidden], row i = W1 f_i
        let dst = feat.matmul(&self.w2.transpose()?)?; // [d, hidden], row j = W2 f_j
        let mut rows = Vec::with_capacity(d);
        for i in 0..d {
            let src_i = src.slice_rows(i, i + 1)?;
            // Row-broadcast add: entry (j, h) = (W1 f_i + W2 f_j)_h.
            let pair = dst.add(&src_i)?;
            let scores = pair.tanh().matmul(&self.u)?; // [d, 1], entry j = logit(i -> j)
            rows.push(scores.transpose()?);
        }
        let refs: Vec<&Tensor> = rows.iter().collect();
        let logits = Tensor::concat(&refs, 0)?.add(&self.bias)?;
        // Pin the diagonal: keep off-diagonal entries, then add the huge
        // negative constant on the diagonal.
        let off_diag = Tensor::constant(&[d, d], off_diagonal_ones(d));
        let diag_pin: Vec<f64> = (0..d * d)
            .map(|idx| if idx % (d + 1) == 0 { DIAG_LOGIT } else { 0.0 })
            .collect();
        logits.mul(&off_diag)?.add(&Tensor::constant(&[d, d], diag_pin))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let shape = self.w1.shape();
        let mut ckpt = Checkpoint::new(
            "decoder",
            serde_json::json!({ "hidden": shape[0], "feat_dim": shape[1] }),
        );
        ckpt.push("w1", &self.w1);
        ckpt.push("w2", &self.w2);
        ckpt.push("u", &self.u);
        ckpt.push("bias", &self.bias);
        ckpt.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path, "decoder")?;
        let hidden = extra_usize(&ckpt, "hidden")?;
        let feat_dim = extra_usize(&ckpt, "feat_dim")?;
        Ok(EdgeDecoder {
            w1: ckpt.param("w1", &[hidden, feat_dim])?,
            w2: ckpt.param("w2", &[hidden, feat_dim])?,
            u: ckpt.param("u", &[hidden, 1])?,
            bias: ckpt.param("bias", &[1])?,
        })
    }
}

fn off_diagonal_ones(d: usize) -> Vec<f64> {
    (0..d * d)
        .map(|idx| if idx % (d + 1) == 0 { 0.0 } else { 1.0 })
        .collect()
}

/// A sampled graph with its sampling statistics.
#[derive(Debug, Clone)]
pub struct GraphSample {
    /// Binary adjacency, zero diagonal.
    pub adjacency: DMatrix<f64>,
    /// Edge probabilities the sample was drawn from (diagonal exactly 0).
    pub edge_probs: DMatrix<f64>,
    /// Log-probability of this exact adjacency under `edge_probs`, summed
    /// over off-diagonal entries with probabilities clamped away from 0/1.
    /// Always <= 0 up to the clamp.
    pub log_prob: f64,
    /// Entropy of the edge distribution (off-diagonal, clamped); >= 0.
    pub entropy: f64,
}

/// Clamped Bernoulli log-terms for probability `p` and outcome `a`.
fn bernoulli_terms(p: f64) -> (f64, f64) {
    let pc = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    (pc.ln(), (1.0 - pc).ln())
}

/// Draw one graph from per-edge Bernoulli distributions defined by `logits`.
/// Off-diagonal entries are drawn independently in row-major order; the
/// diagonal is never drawn (its probability is exactly zero).
pub fn sample_graph(logits: &DMatrix<f64>, rng: &mut RngStream) -> Result<GraphSample> {
    let d = logits.nrows();
    if logits.ncols() != d {
        return Err(DarcError::NotSquare { rows: d, cols: logits.ncols() });
    }
    let mut probs = DMatrix::zeros(d, d);
    let mut adjacency = DMatrix::zeros(d, d);
    let mut log_prob = 0.0;
    let mut entropy = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let p = 1.0 / (1.0 + (-logits[(i, j)]).exp());
            probs[(i, j)] = p;
            let edge = rng.bernoulli(p);
            if edge {
                adjacency[(i, j)] = 1.0;
            }
            let (lp, l1p) = bernoulli_terms(p);
            log_prob += if edge { lp } else { l1p };
            let pc = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            entropy -= pc * lp + (1.0 - pc) * l1p;
        }
    }
    Ok(GraphSample { adjacency, edge_probs: probs, log_prob, entropy })
}

/// Recompute the log-probability of a fixed adjacency under fresh logits.
/// Useful for checking sampler bookkeeping and for off-policy evaluation.
pub fn log_prob_of(logits: &DMatrix<f64>, adjacency: &DMatrix<f64>) -> Result<f64> {
    let d = logits.nrows();
    if logits.ncols() != d {
        return Err(DarcError::NotSquare { rows: d, cols: logits.ncols() });
    }
    crate::numeric::validate_adjacency(adjacency)?;
    if adjacency.nrows() != d {
        return Err(DarcError::ShapeMismatch {
            op: "log_prob_of",
            lhs: vec![d, d],
            rhs: vec![adjacency.nrows(), adjacency.ncols()],
        });
    }
    let mut log_prob = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let p = 1.0 / (1.0 + (-logits[(i, j)]).exp());
            let (lp, l1p) = bernoulli_terms(p);
            log_prob += if adjacency[(i, j)] == 1.0 { lp } else { l1p };
        }
    }
    Ok(log_prob)
}

/// Differentiable log-probability and entropy of a fixed sampled adjacency
/// under the logits tensor. The adjacency is a constant; gradients flow to
/// the logits (and through them to the encoder and decoder). With the clamp
/// inactive, `d log_prob / d logit_ij = a_ij - p_ij` — the standard
/// Bernoulli policy-gradient identity.
pub fn graph_objectives(logits: &Tensor, adjacency: &DMatrix<f64>) -> Result<(Tensor, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(DarcError::BadShape {
            op: "graph_objectives",
            detail: "expected square [d, d] logits".to_string(),
            got: shape,
        });
    }
    let d = shape[0];
    crate::numeric::validate_adjacency(adjacency)?;
    if adjacency.nrows() != d {
        return Err(DarcError::ShapeMismatch {
            op: "graph_objectives",
            lhs: vec![d, d],
            rhs: vec![adjacency.nrows(), adjacency.ncols()],
        });
    }
    let off_diag = Tensor::constant(&[d, d], off_diagonal_ones(d));
    let a = Tensor::from_matrix(adjacency);
    let one_minus_a = a.scale(-1.0).add_scalar(1.0);

    let p = logits.sigmoid().clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let log_p = p.log();
    let log_1mp = p.scale(-1.0).add_scalar(1.0).log();

    let log_prob = a
        .mul(&log_p)?
        .add(&one_minus_a.mul(&log_1mp)?)?
        .mul(&off_diag)?
        .sum();
    let one_minus_p = p.scale(-1.0).add_scalar(1.0);
    let entropy = p
        .mul(&log_p)?
        .add(&one_minus_p.mul(&log_1mp)?)?
        .mul(&off_diag)?
        .sum()
        .scale(-1.0);
    Ok((log_prob, entropy))
}
