//! Language-fairness benchmarking for multilingual information retrieval.
//!
//! The crate measures how consistently a retrieval system ranks documents
//! when semantically parallel queries are issued in different languages,
//! and provides a small trainable dense retriever whose alignment losses
//! demonstrate bias mitigation at desk scale.
//!
//! Modules:
//! - [`corpus`]: data model, file ingestion, deterministic splits, and a
//!   synthetic multilingual benchmark generator.
//! - [`bm25`]: inverted index and BM25 retrieval (the lexical baseline).
//! - [`dense`]: hashed character n-gram encoder and exact dot-product
//!   retrieval.
//! - [`losses`]: contrastive, MSE, and KL-alignment training objectives
//!   with analytic gradients, a finite-difference verifier, and the
//!   training loop.
//! - [`metrics`]: MRR@k, Recall@k, per-query rank correlation, MRC@k, and
//!   the language matrices.
//! - [`trec`]: run-file reading and writing.

pub mod bm25;
pub mod corpus;
pub mod dense;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod trec;

pub use error::{Error, Result};
