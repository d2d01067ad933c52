//! Reproducibility harness: dataset handling, multi-seed experiment
//! runs, and the invariant suite.

pub mod dataset;
pub mod experiment;
pub mod invariants;
