//! Causal DAG discovery from observational data with missing values.
//!
//! The pipeline learns a directed acyclic graph over the columns of a data
//! matrix in which some entries are unobserved:
//!
//! 1. [`imputer`] fills the missing entries with a small network, optionally
//!    pretrained adversarially against a discriminator that tries to tell
//!    imputed entries from observed ones.
//! 2. [`actor`] encodes the completed batch with a self-attention encoder
//!    (one token per column, no positional encodings) and decodes pairwise
//!    edge logits with a bilinear head; graphs are drawn edge-by-edge from
//!    independent Bernoulli distributions.
//! 3. [`critic`] scores a sampled graph with a BIC-style least-squares score
//!    plus an acyclicity penalty, and a small value network provides the
//!    baseline for policy gradients.
//! 4. [`trainer`] ties it together with an actor-critic REINFORCE loop and
//!    prunes weak edges from the best graph found.
//!
//! Everything runs on a self-contained reverse-mode autodiff engine
//! ([`tensor`]), is deterministic for a fixed seed ([`rng`]), and is also
//! exposed through a command line (`darc`) and a C ABI (`darc-ffi`).

pub mod actor;
pub mod checkpoint;
pub mod cli;
pub mod critic;
pub mod csvmat;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod imputer;
pub mod metrics;
pub mod numeric;
pub mod opt;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{DarcError, Result};
pub use rng::RngStream;
pub use tensor::Tensor;

/// Crate version, also exposed through the C ABI.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
