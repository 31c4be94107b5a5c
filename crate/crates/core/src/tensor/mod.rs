//! Dense f64 tensors with a recording tape for reverse-mode differentiation.
//!
//! Values are plain row-major buffers; differentiable computations run on a
//! [`Tape`] that records every primitive and replays it in reverse on
//! [`Tape::backward`]. A tape is single-use: one forward pass, one backward
//! pass, then it is consumed. Learnable leaves live outside the tape as
//! [`Param`]s and receive their gradients when backward runs.

mod tape;
mod value;

pub mod gradcheck;
pub mod optim;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use optim::{AdamConfig, AdamState, Param};
pub use tape::{BnStats, Tape, Var};
pub use value::Tensor;

use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, buffer holds {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a 2-d tensor, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("{op}: segment ids must be sorted non-decreasing (entry {index})")]
    UnsortedSegments { op: &'static str, index: usize },
    #[error("{op}: segment {segment} is empty")]
    EmptySegment { op: &'static str, segment: usize },
    #[error("{op}: segment id list length {ids} does not match first axis {axis}")]
    SegmentLength {
        op: &'static str,
        ids: usize,
        axis: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tape already consumed by backward")]
    TapeConsumed,
    #[error("{op}: invalid argument: {message}")]
    InvalidArgument { op: &'static str, message: String },
    #[error("parameter '{name}' has no gradient")]
    MissingGradient { name: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;
