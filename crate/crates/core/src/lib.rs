//! Knowledge-graph embedding recommender.
//!
//! The pipeline splits a knowledge graph into one subgraph per relation type,
//! learns node2vec-style embeddings for each, turns user–item cosine
//! similarities into ranking features and fits a LambdaMART ranker over them.
//! Matrix-factorization and popularity baselines plus a top-n evaluation
//! harness sit alongside for comparison.
//!
//! Module map:
//!
//! - [`kg`]: triple and interaction ingestion, per-relation subgraphs
//! - [`walk`]: second-order biased random walks
//! - [`embed`]: skip-gram with negative sampling over walk corpora
//! - [`features`]: per-relation relatedness features
//! - [`ltr`]: query groups, NDCG, LambdaMART
//! - [`baselines`]: MostPopular, BPRMF, SoftMarginRankingMF
//! - [`eval`]: splitting, P@n / R@n / MAP, reports
//! - [`synth`]: planted-preference vehicle dataset
//! - [`pipeline`]: staged orchestration behind the `kgrec` binary

pub mod baselines;
pub mod embed;
pub mod error;
pub mod eval;
pub mod features;
pub mod kg;
pub mod ltr;
pub mod pipeline;
pub mod rank;
pub mod rng;
pub mod synth;
pub mod walk;

pub use error::{Error, Result};
pub use kg::{EntityId, RelationId};
