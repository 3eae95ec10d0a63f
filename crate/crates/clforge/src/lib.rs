//! clforge: a desk-scale continual-learning laboratory for language models
//! of code.
//!
//! The crate builds API-centric corpora from Java-like sources (or a
//! synthetic generator), pre-trains tiny decoder/encoder language models on
//! an in-distribution split, fine-tunes them sequentially over a stream of
//! out-of-distribution API domains under one of five continual-learning
//! strategies, and reports task metrics plus Average/Forgetting
//! meta-metrics.

pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod strategies;

pub use error::{Error, Result};
