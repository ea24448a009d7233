//! Query-enriched neural code search.
//!
//! Joint code/text embeddings trained with a margin ranking loss, a
//! sequence-to-sequence query enricher fine-tuned with advantage actor-critic
//! against a retrieval-rank reward, and hybrid ranking over original and
//! enriched queries.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod qse;
pub mod ranker;
pub mod rl;

pub use error::{Error, Result};
