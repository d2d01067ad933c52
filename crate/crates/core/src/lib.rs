//! Content-based publish/subscribe matching where the match decision is
//! delegated to a pluggable LLM backend.
//!
//! The pipeline embeds subscription descriptions, clusters them,
//! compresses each cluster by cover/merge rounds, packs events into
//! window-bounded batches, and unions per-cluster answers into one
//! decision per event. An analytic cost model predicts invocation
//! counts, latency, and spend before anything runs; the harness checks
//! those predictions and a set of behavioral invariants against
//! simulated backends.
//!
//! Entry points: [`router::run_pipeline`] for one configuration,
//! [`harness::experiment::run_experiment`] for seeded sweeps with CSV
//! artifacts, and [`cli::run`] for the command-line binary.

pub mod backend;
pub mod cli;
pub mod clustering;
pub mod costmodel;
pub mod covermerge;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod qoe;
pub mod router;

pub use error::{Error, Result};
