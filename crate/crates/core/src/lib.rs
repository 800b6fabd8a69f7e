//! Self-supervised pretraining of autoregressive encoders on multivariate
//! event sequences (card transactions and the like).
//!
//! The pipeline is:
//!
//! 1. [`data_model`]: ingest raw events, fit normalization, encode histories.
//! 2. [`model`]: an MLP → GRU → sigmoid-projection encoder trained with a
//!    mix of next-event prediction (NP) and time-decayed past
//!    reconstruction (PR).
//! 3. [`embeddings`]: pool per-event embeddings into entity vectors and
//!    build category-value embeddings with cosine nearest neighbours.
//! 4. [`baselines`] and [`downstream`]: hand-engineered aggregates, MLP
//!    heads and evaluation metrics (AUC, accuracy, MSLE, VDR at FP-ratio).
//!
//! [`synth`] generates corpora with planted structure for end-to-end checks.
//! All numerics are `f64` and all gradients in [`nn`] are written by hand.

pub mod baselines;
pub mod data_model;
pub mod downstream;
pub mod embeddings;
mod error;
pub mod fingerprint;
pub mod model;
pub mod nn;
pub mod synth;
pub mod table;

pub use error::{Error, Result};
