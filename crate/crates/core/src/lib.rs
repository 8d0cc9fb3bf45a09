//! Induces probabilistic temporal complex-event schemas from typed
//! instance graphs by training an autoregressive graph generative model,
//! and evaluates the induced schemas via perplexity, schema matching, and
//! schema-guided ending-event prediction.
//!
//! The pipeline: ingest instance graphs ([`graph`]), train the temporal
//! event graph model ([`model`], [`train`]), decode schemas ([`decode`]),
//! and score them ([`eval`]). A sequential-pattern-mining baseline
//! ([`miner`]) and a planted-schema corpus generator ([`synth`]) support
//! controlled end-to-end verification.

pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod graph;
pub mod miner;
pub mod model;
pub mod ontology;
pub mod parallel;
pub mod synth;
pub mod tape;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
