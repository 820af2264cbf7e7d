//! Counterfactual effect estimation.
//!
//! [`forest`] holds the tree learners, [`dml`] the generic cross-fitted
//! estimator, and [`engine`] ties both to the market: features, treatment
//! basis, training corpus, retraining and artifacts.

pub mod dml;
pub mod engine;
pub mod forest;

pub use engine::{
    generate_corpus, long_term_value, read_dataset, write_dataset, CausalEngine, CausalEstimate,
    CorpusConfig, EngineConfig, Observation,
};
