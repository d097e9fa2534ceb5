//! Cross-domain collaborative filtering with translation-based
//! factorization.
//!
//! The pipeline clusters users per domain, relates the user clusters of each
//! source domain to the target through a sparse nonnegative cluster
//! similarity, turns that similarity into per-item source weights, and
//! trains a factorization scorer whose pairwise term is the squared distance
//! between translated and plain feature embeddings. A feed-forward variant
//! learns on pooled translated embeddings instead. Ranking quality is
//! measured with recall@n and NDCG@n.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coclustering;
pub mod config;
pub mod data;
pub mod deep;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;

pub use error::{Error, Result};
