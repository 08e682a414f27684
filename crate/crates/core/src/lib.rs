//! Bi-metric approximate nearest neighbor search.
//!
//! Indices are built with a cheap *proxy* distance `d` only. Queries are then
//! answered under an expensive *ground-truth* distance `D`, and every
//! evaluation of `D` is counted against a hard per-query budget.
//!
//! - [`dataset`]: fvecs / qrels ingestion, deduplication, dataset statistics.
//! - [`metric`]: Euclidean oracles, the counting/budget wrapper, and checks of
//!   the sandwich relation `d <= D <= C·d`.
//! - [`anngraph`]: alpha-shortcut reachability graphs, greedy/beam search and
//!   the two-stage bi-metric search.
//! - [`covertree`]: cover tree with slack `T` built under `d`, searched under `D`.
//! - [`harness`]: the three-method budget sweep, Recall@k / NDCG@k, synthetic
//!   bi-metric instances and the ground-truth cache.

pub mod anngraph;
pub mod covertree;
pub mod dataset;
mod error;
pub mod harness;
pub mod metric;
pub mod seed;

pub use error::{Error, Result};
