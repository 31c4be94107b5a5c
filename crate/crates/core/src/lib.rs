//! Attention-based graph neural networks with cardinality-preserving
//! aggregation.
//!
//! The crate bundles everything needed to study how softmax-attention
//! aggregators treat neighborhood multisets:
//!
//! - [`tensor`]: a dense f64 tensor engine with reverse-mode differentiation,
//!   Adam, and finite-difference gradient checking.
//! - [`graph`]: graph/dataset types, TU-format ingestion and serialisation,
//!   and a synthetic triangle-membership benchmark generator.
//! - [`wl`]: 1-WL color refinement, a non-isomorphism oracle, and the
//!   collision analysis that measures what fraction of neighborhoods a
//!   softmax-attention aggregator is guaranteed to confuse.
//! - [`aggregators`]: GAT-style attention plus five aggregation rules —
//!   the plain weighted sum and four cardinality-preserving variants.
//! - [`models`]: node- and graph-classification networks assembled from
//!   those layers.
//! - [`training`]: a seeded cross-validation harness with paired
//!   significance testing.
//! - [`propcheck`]: executable checks that the collision/separation
//!   behaviour claimed for the aggregators actually holds numerically.

pub mod aggregators;
pub mod graph;
pub mod models;
pub mod nn;
pub mod propcheck;
pub mod tensor;
pub mod training;
pub mod wl;

pub use tensor::{Tape, Tensor, Var};
