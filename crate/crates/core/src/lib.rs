//! Pairs standardized garment product images with editorial lookbook images.
//!
//! Embedding similarity is computed over several channels (full image,
//! description text, detector crops), standardized per model, fused into an
//! ensemble score, and used to curate a rank-ordered, quality-tiered pair
//! manifest. Evaluation covers Recall@K, Spearman rank correlation between
//! models, and match-rate curves from human annotation.

pub mod channels;
pub mod config;
pub mod corpus;
pub mod curation;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod fusion;
pub mod fuzzy;
pub mod pipeline;
pub mod retrieval;
pub mod standardize;
pub mod table;
pub mod textio;

pub use error::{Error, Result};
