//! Command-line interface: dataset generation, imputer pretraining, graph
//! search, and recovery evaluation.
//!
//! Configuration comes from an optional JSON file (`--config`), with
//! command-line flags overriding file values. Every run is deterministic
//! given its config and seed. Errors are emitted as one-line JSON on
//! standard error; exit codes are 0 (success), 1 (runtime failure), and
//! 2 (usage or validation failure).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::critic::Basis;
use crate::csvmat::{matrix_to_csv, read_adjacency, write_matrix};
use crate::datagen::{
    apply_missingness, generate_dag, simulate_sem, GraphScheme, GroundTruthGraph, NoiseKind,
    SemFunc,
};
use crate::dataset::MaskedDataset;
use crate::error::{DarcError, Result};
use crate::imputer::pretrain_adversarial;
use crate::metrics::compute_metrics;
use crate::opt::OptimKind;
use crate::rng::RngStream;
use crate::trainer::{train, ImputationKind, TrainConfig, TrainResult};

/// Synthetic-data generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub d: usize,
    pub n: usize,
    pub scheme: GraphScheme,
    pub sem: SemFunc,
    pub noise: NoiseKind,
    /// Probability that any one cell is masked (independently).
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            d: 12,
            n: 5000,
            scheme: GraphScheme::Bernoulli { p: 0.2 },
            sem: SemFunc::Linear,
            noise: NoiseKind::Gaussian { sigma: 1.0 },
            missing_rate: 0.2,
            seed: 0,
        }
    }
}

impl GenerateConfig {
    /// Collect every validation failure, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.d < 2 {
            problems.push(format!("d must be at least 2; got {}", self.d));
        }
        if self.n == 0 {
            problems.push("n must be positive".to_string());
        }
        if let GraphScheme::Bernoulli { p } = self.scheme {
            if !(0.0..=1.0).contains(&p) {
                problems.push(format!("edge probability must lie in [0, 1]; got {p}"));
            }
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            problems.push(format!(
                "missing_rate must lie in [0, 1); got {}",
                self.missing_rate
            ));
        }
        match self.noise {
            NoiseKind::Gaussian { sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    problems.push(format!("noise sigma must be nonnegative; got {sigma}"));
                }
            }
            NoiseKind::NonGaussianPower { sigma, exponent } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    problems.push(format!("noise sigma must be nonnegative; got {sigma}"));
                }
                if !(exponent > 0.0 && exponent.is_finite()) {
                    problems.push(format!("noise exponent must be positive; got {exponent}"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DarcError::InvalidArgument(problems.join("; ")))
        }
    }
}

/// The full run configuration: one JSON document covering every subcommand.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input dataset CSV for `pretrain` and `train`.
    pub data: Option<PathBuf>,
    /// Output directory for all written artifacts.
    pub out_dir: Option<PathBuf>,
    /// Cell content marking a missing value; empty cells always count.
    pub missing_token: Option<String>,
    pub generate: GenerateConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DarcError::ReadInput {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    fn missing_token(&self) -> &str {
        self.missing_token.as_deref().unwrap_or("")
    }

    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "darc",
    version = crate::VERSION,
    about = "Causal DAG discovery from observational data with missing values"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset: ground-truth DAG, clean data, and a
    /// masked copy.
    Generate(GenerateArgs),
    /// Pretrain the imputation network on a masked dataset.
    Pretrain(PretrainArgs),
    /// Search for the causal graph (optionally pretraining the imputer
    /// first) and write the recovered adjacency matrices.
    Train(TrainArgs),
    /// Compare an estimated adjacency CSV against a ground-truth one.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override (applies to the subcommand being run).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long = "out")]
    out_dir: Option<PathBuf>,
    /// Cell content marking a missing value (empty cells always count).
    #[arg(long)]
    missing_token: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    /// Complete DAG on a random variable order.
    UpperTriangularPermuted,
    /// Independent edge coin-flips on a random order.
    Bernoulli,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SemArg {
    Linear,
    Quadratic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseArg {
    Gaussian,
    Power,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BasisArg {
    Linear,
    Quadratic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ImputationArg {
    Learned,
    MeanFill,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of variables (columns).
    #[arg(long)]
    d: Option<usize>,
    /// Number of samples (rows).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    scheme: Option<SchemeArg>,
    /// Edge probability for the bernoulli scheme.
    #[arg(long)]
    edge_prob: Option<f64>,
    #[arg(long)]
    sem: Option<SemArg>,
    #[arg(long)]
    noise: Option<NoiseArg>,
    /// Noise scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Exponent for the power noise kind.
    #[arg(long)]
    exponent: Option<f64>,
    /// Probability that any one cell is masked.
    #[arg(long)]
    missing_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pretraining epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_actor: Option<f64>,
    #[arg(long)]
    lr_critic: Option<f64>,
    #[arg(long)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    prune_threshold: Option<f64>,
    #[arg(long)]
    basis: Option<BasisArg>,
    /// Enable or disable imputer pretraining.
    #[arg(long)]
    pretrain: Option<bool>,
    /// Pretraining epochs (when pretraining is enabled).
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    imputation: Option<ImputationArg>,
    #[arg(long)]
    standardize: Option<bool>,
    #[arg(long)]
    samples_per_epoch: Option<usize>,
    #[arg(long)]
    edge_bias: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Estimated adjacency CSV.
    estimated: PathBuf,
    /// Ground-truth adjacency CSV.
    truth: PathBuf,
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out_dir {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(token) = &common.missing_token {
        cfg.missing_token = Some(token.clone());
    }
    if let Some(seed) = common.seed {
        cfg.generate.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DarcError::WriteOutput {
        path: dir.display().to_string(),
        source: e,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| DarcError::WriteOutput {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| DarcError::WriteOutput {
        path: path.display().to_string(),
        source: e,
    })
}

/// Synthesize a ground-truth graph, the complete data matrix, and its
/// MCAR-masked view from `cfg`'s seed. The graph, SEM noise, and mask each
/// draw from an independent stream of the seed, so any one of them can be
/// reproduced without replaying the others.
pub fn synthesize(g: &GenerateConfig) -> Result<(GroundTruthGraph, DMatrix<f64>, MaskedDataset)> {
    g.validate()?;
    let rng = RngStream::new(g.seed, "generate");
    let truth = generate_dag(g.d, g.scheme, &mut rng.derive("graph"))?;
    let x = simulate_sem(&truth, g.n, g.sem, g.noise, &mut rng.derive("sem"))?;
    let masked = apply_missingness(&x, g.missing_rate, &mut rng.derive("mask"))?;
    Ok((truth, x, masked))
}

/// Generate and write a synthetic dataset. Returns the written file paths.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let g = &cfg.generate;
    let (truth, x, masked) = synthesize(g)?;
    let out = cfg.out_dir();
    ensure_out_dir(&out)?;
    let full = MaskedDataset::from_complete(x, MaskedDataset::default_names(g.d))?;

    let graph_path = out.join("graph.csv");
    let weights_path = out.join("weights.csv");
    let full_path = out.join("data_full.csv");
    let masked_path = out.join("data_masked.csv");
    let meta_path = out.join("metadata.json");

    write_matrix(&graph_path, truth.adjacency())?;
    write_matrix(&weights_path, truth.weights())?;
    full.write_csv(&full_path, cfg.missing_token())?;
    masked.write_csv(&masked_path, cfg.missing_token())?;
    let metadata = serde_json::json!({
        "command": "generate",
        "version": crate::VERSION,
        "seed": g.seed,
        "config": serde_json::to_value(g)?,
        "edges": crate::numeric::edge_count(truth.adjacency()),
        "masked_cells": masked.masked_count(),
        "column_names": masked.column_names(),
        "files": {
            "graph": "graph.csv",
            "weights": "weights.csv",
            "data_full": "data_full.csv",
            "data_masked": "data_masked.csv",
        },
    });
    write_json(&meta_path, &metadata)?;
    Ok(vec![graph_path, weights_path, full_path, masked_path, meta_path])
}

fn load_dataset(cfg: &RunConfig) -> Result<MaskedDataset> {
    let path = cfg.data.as_ref().ok_or_else(|| {
        DarcError::InvalidArgument("no input dataset: set --data or the config's data field".into())
    })?;
    MaskedDataset::load_csv(path, cfg.missing_token())
}

/// Pretrain the imputer alone and write its checkpoint and loss log.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let started = std::time::Instant::now();
    let raw = load_dataset(cfg)?;
    let ds = if cfg.train.standardize { raw.standardize() } else { raw };
    cfg.train.pretrain_config.validate()?;
    let mut rng = RngStream::new(cfg.train.seed, "train").derive("pretrain");
    let (imputer, log) = pretrain_adversarial(&ds, &cfg.train.pretrain_config, &mut rng)?;

    let out = cfg.out_dir();
    ensure_out_dir(&out)?;
    let ckpt_path = out.join("imputer.json");
    let log_path = out.join("pretrain_log.csv");
    let meta_path = out.join("metadata.json");
    imputer.save(&ckpt_path)?;
    write_text(&log_path, &pretrain_log_csv(&log))?;
    let metadata = serde_json::json!({
        "command": "pretrain",
        "version": crate::VERSION,
        "seed": cfg.train.seed,
        "config": serde_json::to_value(&cfg.train.pretrain_config)?,
        "standardize": cfg.train.standardize,
        "rows": ds.n(),
        "columns": ds.d(),
        "masked_cells": ds.masked_count(),
        "wall_time_secs": started.elapsed().as_secs_f64(),
        "files": { "imputer": "imputer.json", "pretrain_log": "pretrain_log.csv" },
    });
    write_json(&meta_path, &metadata)?;
    Ok(vec![ckpt_path, log_path, meta_path])
}

fn pretrain_log_csv(log: &[crate::imputer::PretrainLogRow]) -> String {
    let mut out = String::from("epoch,d_loss,g_loss,disc_accuracy\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.d_loss, row.g_loss, row.disc_accuracy
        ));
    }
    out
}

fn trace_csv(result: &TrainResult) -> String {
    let mut out = String::from(
        "epoch,reward,score,acyclicity,dag_fraction,actor_loss,critic_loss,value_gap_loss\n",
    );
    for row in &result.trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.epoch,
            row.reward,
            row.score,
            row.acyclicity,
            row.dag_fraction,
            row.actor_loss,
            row.critic_loss,
            row.value_gap_loss
        ));
    }
    out
}

/// Run the full search and write every artifact.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(cfg)?;
    let (result, params) = train(&ds, &cfg.train)?;

    let out = cfg.out_dir();
    ensure_out_dir(&out)?;
    let mut written = Vec::new();

    let trace_path = out.join("trace.csv");
    write_text(&trace_path, &trace_csv(&result))?;
    written.push(trace_path);

    if !result.pretrain_log.is_empty() {
        let log_path = out.join("pretrain_log.csv");
        write_text(&log_path, &pretrain_log_csv(&result.pretrain_log))?;
        written.push(log_path);
    }

    if let Some(best) = &result.best {
        let best_path = out.join("best_graph.csv");
        write_matrix(&best_path, &best.adjacency)?;
        written.push(best_path);
        let pruned_path = out.join("pruned_graph.csv");
        write_matrix(pruned_path.as_path(), result.pruned.as_ref().expect("pruned accompanies best"))?;
        written.push(pruned_path);
    }
    if let Some(probs) = &result.edge_probs {
        let probs_path = out.join("edge_probabilities.csv");
        write_text(&probs_path, &matrix_to_csv(probs))?;
        written.push(probs_path);
    }

    if let Some(imp) = &params.imputer {
        let p = out.join("imputer.json");
        imp.save(&p)?;
        written.push(p);
    }
    let enc_path = out.join("encoder.json");
    params.encoder.save(&enc_path)?;
    written.push(enc_path);
    let dec_path = out.join("decoder.json");
    params.decoder.save(&dec_path)?;
    written.push(dec_path);
    let val_path = out.join("value.json");
    params.value.save(&val_path)?;
    written.push(val_path);

    let meta_path = out.join("metadata.json");
    let best_json = match &result.best {
        Some(b) => serde_json::json!({
            "found": true,
            "epoch": b.epoch,
            "score": b.score,
            "reward": b.reward,
            "edges": crate::numeric::edge_count(&b.adjacency),
            "pruned_edges": result
                .pruned
                .as_ref()
                .map(crate::numeric::edge_count),
        }),
        None => serde_json::json!({ "found": false }),
    };
    let metadata = serde_json::json!({
        "command": "train",
        "version": crate::VERSION,
        "seed": cfg.train.seed,
        "config": serde_json::to_value(&cfg.train)?,
        "data": cfg.data.as_ref().map(|p| p.display().to_string()),
        "rows": ds.n(),
        "columns": ds.d(),
        "column_names": result.column_names,
        "masked_cells": ds.masked_count(),
        "update_order": "critic_then_actor",
        "best": best_json,
        "epochs_run": result.trace.len(),
        "wall_time_secs": result.wall_time_secs,
    });
    write_json(&meta_path, &metadata)?;
    written.push(meta_path);
    Ok(written)
}

/// Compare two adjacency CSVs and print the metrics as JSON on stdout.
pub fn cmd_evaluate(estimated: &Path, truth: &Path) -> Result<String> {
    let est = read_adjacency(estimated)?;
    let tru = read_adjacency(truth)?;
    if est.nrows() != tru.nrows() {
        return Err(DarcError::InvalidArgument(format!(
            "adjacency dimensions differ: estimated is {}x{}, truth is {}x{}",
            est.nrows(),
            est.ncols(),
            tru.nrows(),
            tru.ncols()
        )));
    }
    let m = compute_metrics(&est, &tru)?;
    let json = serde_json::to_string_pretty(&m)?;
    Ok(json)
}

/// Parse arguments, dispatch, and map errors to exit codes. The process
/// exit code is returned rather than applied so tests can call this
/// directly.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Clap prints its own message; usage problems exit 2.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(stdout) => {
            if let Some(text) = stdout {
                println!("{text}");
            }
            0
        }
        Err(e) => {
            let payload = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string() }
            });
            eprintln!("{payload}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<Option<String>> {
    match cli.command {
        Command::Generate(args) => {
            let mut cfg = load_config(&args.common)?;
            apply_generate_overrides(&mut cfg, &args)?;
            cmd_generate(&cfg)?;
            Ok(None)
        }
        Command::Pretrain(args) => {
            let mut cfg = load_config(&args.common)?;
            if let Some(data) = &args.data {
                cfg.data = Some(data.clone());
            }
            if let Some(epochs) = args.epochs {
                cfg.train.pretrain_config.epochs = epochs;
            }
            if let Some(batch) = args.batch_size {
                cfg.train.pretrain_config.batch_size = batch;
            }
            cmd_pretrain(&cfg)?;
            Ok(None)
        }
        Command::Train(args) => {
            let mut cfg = load_config(&args.common)?;
            apply_train_overrides(&mut cfg, &args);
            cmd_train(&cfg)?;
            Ok(None)
        }
        Command::Evaluate(args) => {
            let json = cmd_evaluate(&args.estimated, &args.truth)?;
            Ok(Some(json))
        }
    }
}

fn apply_generate_overrides(cfg: &mut RunConfig, args: &GenerateArgs) -> Result<()> {
    let g = &mut cfg.generate;
    if let Some(d) = args.d {
        g.d = d;
    }
    if let Some(n) = args.n {
        g.n = n;
    }
    match args.scheme {
        Some(SchemeArg::UpperTriangularPermuted) => {
            g.scheme = GraphScheme::UpperTriangularPermuted;
        }
        Some(SchemeArg::Bernoulli) => {
            let p = args.edge_prob.unwrap_or(match g.scheme {
                GraphScheme::Bernoulli { p } => p,
                _ => 0.2,
            });
            g.scheme = GraphScheme::Bernoulli { p };
        }
        None => {
            if let Some(p) = args.edge_prob {
                match g.scheme {
                    GraphScheme::Bernoulli { .. } => g.scheme = GraphScheme::Bernoulli { p },
                    _ => {
                        return Err(DarcError::InvalidArgument(
                            "--edge-prob only applies to the bernoulli scheme".into(),
                        ))
                    }
                }
            }
        }
    }
    if let Some(sem) = args.sem {
        g.sem = match sem {
            SemArg::Linear => SemFunc::Linear,
            SemArg::Quadratic => SemFunc::Quadratic,
        };
    }
    match args.noise {
        Some(NoiseArg::Gaussian) => {
            g.noise = NoiseKind::Gaussian { sigma: args.sigma.unwrap_or(1.0) };
        }
        Some(NoiseArg::Power) => {
            g.noise = NoiseKind::NonGaussianPower {
                sigma: args.sigma.unwrap_or(1.0),
                exponent: args.exponent.unwrap_or(3.0),
            };
        }
        None => {
            if let Some(sigma) = args.sigma {
                g.noise = match g.noise {
                    NoiseKind::Gaussian { .. } => NoiseKind::Gaussian { sigma },
                    NoiseKind::NonGaussianPower { exponent, .. } => {
                        NoiseKind::NonGaussianPower { sigma, exponent }
                    }
                };
            }
            if let Some(exponent) = args.exponent {
                g.noise = match g.noise {
                    NoiseKind::NonGaussianPower { sigma, .. } => {
                        NoiseKind::NonGaussianPower { sigma, exponent }
                    }
                    NoiseKind::Gaussian { sigma } => {
                        NoiseKind::NonGaussianPower { sigma, exponent }
                    }
                };
            }
        }
    }
    if let Some(rate) = args.missing_rate {
        g.missing_rate = rate;
    }
    Ok(())
}

fn apply_train_overrides(cfg: &mut RunConfig, args: &TrainArgs) {
    if let Some(data) = &args.data {
        cfg.data = Some(data.clone());
    }
    let t = &mut cfg.train;
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.lr_actor {
        t.lr_actor = v;
    }
    if let Some(v) = args.lr_critic {
        t.lr_critic = v;
    }
    if let Some(v) = args.optimizer {
        t.optimizer = match v {
            OptimizerArg::Sgd => OptimKind::Sgd,
            OptimizerArg::Adam => OptimKind::Adam,
        };
    }
    if let Some(v) = args.lambda1 {
        t.lambda1 = v;
    }
    if let Some(v) = args.lambda2 {
        t.lambda2 = v;
    }
    if let Some(v) = args.lambda3 {
        t.lambda3 = v;
    }
    if let Some(v) = args.prune_threshold {
        t.prune_threshold = v;
    }
    if let Some(v) = args.basis {
        t.basis = match v {
            BasisArg::Linear => Basis::Linear,
            BasisArg::Quadratic => Basis::Quadratic,
        };
    }
    if let Some(v) = args.pretrain {
        t.pretrain = v;
    }
    if let Some(v) = args.pretrain_epochs {
        t.pretrain_config.epochs = v;
    }
    if let Some(v) = args.imputation {
        t.imputation = match v {
            ImputationArg::Learned => ImputationKind::Learned,
            ImputationArg::MeanFill => ImputationKind::MeanFill,
        };
    }
    if let Some(v) = args.standardize {
        t.standardize = v;
    }
    if let Some(v) = args.samples_per_epoch {
        t.samples_per_epoch = v;
    }
    if let Some(v) = args.edge_bias {
        t.edge_bias = Some(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use tempfile::tempdir;

    fn base_config(out: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.out_dir = Some(out.to_path_buf());
        cfg.generate = GenerateConfig {
            d: 4,
            n: 120,
            scheme: GraphScheme::Bernoulli { p: 0.4 },
            sem: SemFunc::Linear,
            noise: NoiseKind::Gaussian { sigma: 0.8 },
            missing_rate: 0.2,
            seed: 5,
        };
        cfg
    }

    #[test]
    fn generate_writes_all_documented_files() {
        let dir = tempdir().unwrap();
        let cfg = base_config(dir.path());
        let files = cmd_generate(&cfg).unwrap();
        assert_eq!(files.len(), 5);
        for name in ["graph.csv", "weights.csv", "data_full.csv", "data_masked.csv", "metadata.json"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let truth = read_adjacency(&dir.path().join("graph.csv")).unwrap();
        assert_eq!(truth.nrows(), 4);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap())
                .unwrap();
        assert_eq!(meta["command"], "generate");
        assert_eq!(meta["seed"], 5);
        assert_eq!(meta["config"]["d"], 4);
    }

    #[test]
    fn generate_is_deterministic_per_seed() {
        let dir1 = tempdir().unwrap();
        let dir2 = tempdir().unwrap();
        cmd_generate(&base_config(dir1.path())).unwrap();
        cmd_generate(&base_config(dir2.path())).unwrap();
        for name in ["graph.csv", "weights.csv", "data_full.csv", "data_masked.csv"] {
            let a = std::fs::read(dir1.path().join(name)).unwrap();
            let b = std::fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn zero_missing_rate_writes_identical_data_files() {
        let dir = tempdir().unwrap();
        let mut cfg = base_config(dir.path());
        cfg.generate.missing_rate = 0.0;
        cmd_generate(&cfg).unwrap();
        let full = std::fs::read(dir.path().join("data_full.csv")).unwrap();
        let masked = std::fs::read(dir.path().join("data_masked.csv")).unwrap();
        assert_eq!(full, masked);
    }

    #[test]
    fn generate_validation_collects_all_failures() {
        let mut cfg = RunConfig::default();
        cfg.generate.d = 1;
        cfg.generate.n = 0;
        cfg.generate.missing_rate = 1.5;
        cfg.generate.scheme = GraphScheme::Bernoulli { p: 2.0 };
        let err = cmd_generate(&cfg).unwrap_err();
        let msg = err.to_string();
        for needle in ["d must be", "n must be", "missing_rate", "edge probability"] {
            assert!(msg.contains(needle), "missing {needle:?} in {msg}");
        }
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"trian": {"epochs": 5}}"#).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, DarcError::Json(_)));
        assert!(err.to_string().contains("trian"));
    }

    #[test]
    fn evaluate_reports_identity_metrics() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 1)] = 1.0;
        write_matrix(&path, &a).unwrap();
        let json = cmd_evaluate(&path, &path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["fdr"], 0.0);
        assert_eq!(v["tpr"], 1.0);
        assert_eq!(v["shd"], 0);
    }

    #[test]
    fn evaluate_rejects_mismatched_dimensions() {
        let dir = tempdir().unwrap();
        let p3 = dir.path().join("g3.csv");
        let p4 = dir.path().join("g4.csv");
        write_matrix(&p3, &DMatrix::<f64>::zeros(3, 3)).unwrap();
        write_matrix(&p4, &DMatrix::<f64>::zeros(4, 4)).unwrap();
        let err = cmd_evaluate(&p3, &p4).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3x3") && msg.contains("4x4"), "{msg}");
    }

    #[test]
    fn train_smoke_run_writes_every_artifact() {
        let dir = tempdir().unwrap();
        let mut cfg = base_config(dir.path());
        cfg.generate.missing_rate = 0.1;
        cmd_generate(&cfg).unwrap();

        let out = dir.path().join("run");
        let mut tcfg = RunConfig::default();
        tcfg.data = Some(dir.path().join("data_masked.csv"));
        tcfg.out_dir = Some(out.clone());
        tcfg.train = TrainConfig {
            epochs: 30,
            batch_size: 16,
            feat_dim: 8,
            encoder_layers: 1,
            attention_heads: 2,
            ff_dim: 16,
            decoder_dim: 8,
            value_dim: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        tcfg.train.pretrain_config.epochs = 10;
        tcfg.train.pretrain_config.batch_size = 16;
        cmd_train(&tcfg).unwrap();
        for name in [
            "trace.csv",
            "pretrain_log.csv",
            "edge_probabilities.csv",
            "imputer.json",
            "encoder.json",
            "decoder.json",
            "value.json",
            "metadata.json",
        ] {
            assert!(out.join(name).exists(), "{name} missing");
        }
        let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
        assert_eq!(trace.lines().count(), 31, "header plus one row per epoch");
        assert!(trace.starts_with("epoch,reward,score,acyclicity,dag_fraction,"));
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("metadata.json")).unwrap())
                .unwrap();
        assert_eq!(meta["command"], "train");
        assert_eq!(meta["config"]["epochs"], 30);
        assert_eq!(meta["config"]["seed"], 11);
        assert_eq!(meta["update_order"], "critic_then_actor");
        // Config echo survives a round trip through the metadata.
        let echoed: TrainConfig = serde_json::from_value(meta["config"].clone()).unwrap();
        assert_eq!(echoed.epochs, 30);
        assert_eq!(echoed.batch_size, 16);
    }

    #[test]
    fn train_without_data_path_is_a_usage_error() {
        let cfg = RunConfig::default();
        let err = cmd_train(&cfg).unwrap_err();
        assert!(err.is_usage());
        assert!(err.to_string().contains("data"));
    }

    #[test]
    fn missing_dataset_file_is_a_usage_error_naming_the_path() {
        let mut cfg = RunConfig::default();
        cfg.data = Some(PathBuf::from("/nonexistent/rows.csv"));
        let err = cmd_train(&cfg).unwrap_err();
        assert!(err.is_usage());
        assert!(err.to_string().contains("/nonexistent/rows.csv"));
    }

    #[test]
    fn run_from_maps_errors_to_exit_codes() {
        // Usage failure: unknown flag.
        assert_eq!(run_from(["darc", "train", "--bogus"]), 2);
        // Usage failure: evaluate on missing files.
        assert_eq!(run_from(["darc", "evaluate", "/no/such/a.csv", "/no/such/b.csv"]), 2);
    }

    #[test]
    fn flag_overrides_beat_config_values() {
        let dir = tempdir().unwrap();
        let cfg_path = dir.path().join("config.json");
        std::fs::write(
            &cfg_path,
            serde_json::json!({
                "out_dir": dir.path().join("a"),
                "generate": { "d": 3, "n": 40, "seed": 9, "missing_rate": 0.0 }
            })
            .to_string(),
        )
        .unwrap();
        let out_b = dir.path().join("b");
        let code = run_from([
            "darc".to_string(),
            "generate".to_string(),
            "--config".to_string(),
            cfg_path.display().to_string(),
            "--out".to_string(),
            out_b.display().to_string(),
            "--n".to_string(),
            "25".to_string(),
        ]);
        assert_eq!(code, 0);
        assert!(!dir.path().join("a").exists(), "config out_dir should lose to the flag");
        let data = std::fs::read_to_string(out_b.join("data_full.csv")).unwrap();
        assert_eq!(data.lines().count(), 26, "25 rows plus header");
    }
}
