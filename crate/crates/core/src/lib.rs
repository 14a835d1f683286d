//! Hierarchical graph-attention extractive summarization.
//!
//! The pipeline ingests section-structured documents, builds a local
//! word-sentence heterogeneous graph and a global section hypergraph per
//! document, scores sentences with stacked graph-attention layers, and
//! selects the top-scoring sentences as the summary. Training targets are
//! produced by a greedy ROUGE oracle against the reference abstract.

pub mod cache;
pub mod cli;
pub mod corpus;
pub mod dropout;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod hetero_attn;
pub mod hyper_attn;
pub mod manifest;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod params;
pub mod rouge;
pub mod summarize;
pub mod synthetic;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
