//! Disagreement-aware ground truth for crowdsourced relation extraction.
//!
//! Raw multi-annotator judgments become annotation vectors and sentence
//! vectors; cosine-based sentence-relation scores turn them into signed,
//! ambiguity-weighted training labels. Predictions and labelings are
//! evaluated with standard and ambiguity-weighted precision, recall and F1.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod rng;
pub mod schema;
pub mod scoring;
pub mod simulator;
pub mod stability;
pub mod vectors;
pub mod worker_quality;

pub use error::{Error, Result};
pub use schema::{Judgment, RelationSchema, Sentence};
