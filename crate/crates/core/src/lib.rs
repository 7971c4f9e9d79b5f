//! Star-rating prediction from the structure of a bipartite review graph.
//!
//! The crate covers the whole pipeline: review ingestion ([`ingest`]), an
//! immutable CSR graph store with temporal splitting ([`graph`]), pair
//! features ([`features`]), a small model zoo ([`models`]), metrics
//! ([`eval`]), embedding fusion ([`fusion`]), descriptive statistics
//! ([`netstats`]), a synthetic graph generator ([`synth`]) and the stage
//! runner behind the CLI ([`pipeline`]).

pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod graph;
pub mod ingest;
pub mod matrix;
pub mod models;
pub mod netstats;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{BipartiteGraph, Node, TemporalSplit};
pub use ingest::{BusinessId, IdMap, ReviewEdge, Timestamp, UserId};
pub use matrix::Matrix;
