//! Bayesian structure discovery for Gaussian causal DAG models via
//! minimal I-MAP MCMC.
//!
//! The posterior over directed acyclic graphs is explored by a
//! Metropolis–Hastings chain on node permutations. Each permutation π is
//! mapped to its minimal I-MAP: the sparsest DAG consistent with π and a
//! fixed collection of conditional-independence test outcomes. Because the
//! I-MAP changes only locally under an adjacent transposition of π, each
//! chain step needs O(p) CI tests on average instead of a full O(p²)
//! reconstruction.
//!
//! The pieces:
//!
//! - [`data`]: datasets and sample correlation sufficient statistics.
//! - [`ci`]: partial correlations and the Fisher z conditional-independence
//!   test, with memoization of test outcomes.
//! - [`graph`]: DAGs, permutations, and adjacent transpositions.
//! - [`imap`]: minimal I-MAP construction and its incremental update.
//! - [`score`]: BGe marginal likelihood and structural log-priors.
//! - [`sampler`]: the Metropolis–Hastings chain over permutations.
//! - [`estimate`]: posterior edge features, CPDAGs, and ROC evaluation.
//! - [`synth`]: random DAGs and linear SEM data for experiments.
//! - [`oracle`]: brute-force exact posteriors for small p, used to verify
//!   the sampler and the scoring code.
//!
//! # Example
//!
//! ```
//! use minimap::prelude::*;
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let dag = minimap::synth::random_dag(5, 0.4, Some(2), &mut rng).unwrap();
//! let sem = minimap::synth::random_weights(&dag, &mut rng);
//! let data = minimap::synth::sample_sem(&sem, 400, &mut rng).unwrap();
//!
//! let config = ChainConfig::new(2_000, 500, 0.1, 42);
//! let hyper = BgeHyper::default_for(data.p());
//! let prior = PriorSpec::sparsity(0.5);
//! let trace = minimap::sampler::run_chain(&data, &config, &hyper, &prior).unwrap();
//! let probs = minimap::estimate::feature_posterior(&trace, FeatureKind::Directed).unwrap();
//! assert!(probs.values.iter().all(|q| (0.0..=1.0).contains(q)));
//! ```

pub mod ci;
pub mod data;
pub mod estimate;
pub mod graph;
pub mod imap;
pub mod oracle;
pub mod sampler;
pub mod score;
pub mod synth;

/// Everything a typical pipeline needs.
pub mod prelude {
    pub use crate::ci::{CiCache, CiKey, CiTester};
    pub use crate::data::{compute_suffstats, Dataset, SuffStats};
    pub use crate::estimate::{Cpdag, FeatureEstimate, FeatureKind};
    pub use crate::graph::{Dag, Permutation, Transposition};
    pub use crate::sampler::{ChainConfig, InitStrategy, Trace};
    pub use crate::score::{BgeHyper, PriorSpec};
    pub use crate::{Error, Result};
}

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A data column is constant, so correlations are undefined.
    #[error("column {0:?} has zero sample variance")]
    ZeroVarianceColumn(String),
    /// A correlation (or scatter) submatrix could not be factorized.
    #[error("numerically singular submatrix: {0}")]
    SingularSubmatrix(String),
    /// Incremental I-MAP update was asked to bridge permutations that do not
    /// differ by exactly one adjacent (or wrap-around) transposition.
    #[error("permutations do not differ by exactly one transposition")]
    NotAdjacent,
    /// Brute-force enumeration was requested beyond its size guard.
    #[error("{what} supports p <= {limit}, got p = {p}")]
    TooLarge {
        what: &'static str,
        p: usize,
        limit: usize,
    },
    /// A trace with no stored samples cannot be summarized.
    #[error("trace contains no samples")]
    EmptyTrace,
    /// A feature estimate is constant, so correlation is undefined.
    #[error("feature estimate has zero variance")]
    ZeroVariance,
    /// ROC evaluation needs at least one positive and one negative.
    #[error("degenerate truth: no {0} examples")]
    DegenerateTruth(&'static str),
    /// A name in a prior or truth file does not match any data column.
    #[error("unknown node name {0:?}")]
    UnknownName(String),
    /// Structural validation failure (configs, graphs, dimensions).
    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
