//! Pairwise-constrained minimum sum-of-squares clustering.
//!
//! The pipeline collapses must-link components into weighted pseudo-points,
//! seeds centroids, and then alternates a working-subset selection with an
//! exact or heuristic 0-1 reassignment restricted to that subset.

pub mod bench;
pub mod collapse;
pub mod data;
pub mod driver;
pub mod error;
pub mod kmeans;
pub mod metrics;
pub mod qaoa;
pub mod qubo;
pub mod refine;
pub mod restricted;
pub mod selection;

pub use error::{Error, Result};
