//! Doubly sparse, data-parallel partially collapsed Gibbs sampling for the
//! hierarchical Dirichlet process topic model.
//!
//! The crate is organized around the sampler pipeline:
//!
//! * [`corpus`] — ingestion and preprocessing of tokenized corpora
//! * [`randdist`] — keyed random streams, distribution primitives, alias tables
//! * [`state`] — sampler state and sufficient-statistic bookkeeping
//! * [`sampler`] — the sparse parallel Gibbs steps
//! * [`oracle`] — slow exact reference samplers used for validation
//! * [`diag`] — likelihood traces, topic summaries, checkpoints
//! * [`cli`] — the `hdp-train` command-line trainer

pub mod cli;
pub mod corpus;
pub mod diag;
pub mod oracle;
pub mod randdist;
pub mod sampler;
pub mod state;
pub mod stats;
