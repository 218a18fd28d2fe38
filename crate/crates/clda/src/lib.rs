//! Clustered Latent Dirichlet Allocation (CLDA).
//!
//! The pipeline splits a document corpus into segments (years, sources, any
//! discrete key), trains an independent LDA topic model on every segment with
//! collapsed Gibbs sampling, lifts the local topics into the shared vocabulary
//! space, and clusters them with cosine k-means into global topics. Global
//! topics may gain or lose local representatives from segment to segment,
//! which is what the dynamics reports track.
//!
//! Modules follow the stages:
//!
//! * [`corpus`] - tokenization, vocabulary pruning, encoding, segment and
//!   hold-out splits
//! * [`gibbs`] - collapsed Gibbs LDA, sharded training, held-out fold-in
//! * [`merge`] - vocabulary alignment, smoothing, normalization of the pooled
//!   topic matrix
//! * [`kmeans`] - spherical k-means with multi-restart selection
//! * [`metrics`] - perplexity, top-word sets, Dice/Jaccard, greedy matching
//! * [`dynamics`] - per-segment topic proportions, compositions, birth/death
//! * [`pipeline`] - staged orchestration behind the `clda` binary

pub mod corpus;
pub mod dynamics;
pub mod error;
pub mod files;
pub mod gibbs;
pub mod kmeans;
pub mod merge;
pub mod metrics;
pub mod pipeline;

pub use error::{CldaError, Result};
