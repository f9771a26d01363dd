//! Online surgical phase recognition by aggregating per-frame spatial
//! embeddings with a causal window of temporal embeddings.
//!
//! The pipeline per frame `t`:
//! spatial embedding `l_t` → causal multi-stage TCN → temporal embedding `g_t`;
//! the last `n` temporal embeddings are self-aggregated by one transformer
//! layer, then queried by a reduced `l_t` through a second layer, giving a
//! distribution over phases.

#![allow(clippy::needless_range_loop)]

pub mod aggregation;
pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod params;
pub mod stats;
pub mod streaming;
pub mod tcn;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
