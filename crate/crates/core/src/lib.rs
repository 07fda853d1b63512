//! Mesoscale structure discovery in large sparse hypergraphs.
//!
//! Fits a family of Poisson multi-tensor factorization models (strictly
//! assortative, semi-assortative, omniassortative) to multi-order hyperedge
//! count data with a generalized EM algorithm, scores heldout hyperedges,
//! and samples synthetic hypergraphs from fitted or hand-specified
//! parameters.

pub mod compute;
pub mod generate;
pub mod hypergraph;
pub mod inference;
pub mod metrics;
pub mod params;
pub mod rng;

pub use hypergraph::{Hyperedge, Hypergraph, MaskedSplit, SummaryStats};
pub use inference::{FitConfig, FitResult, HeldoutScore};
pub use params::{ModelParams, PriorSpec, Variant};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty input")]
    EmptyInput,
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
