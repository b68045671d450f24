//! Dense tensors with a Wengert-style tape for reverse-mode differentiation,
//! plus the Adam optimiser used to train every model in the crate.
//!
//! All arithmetic is `f64`. Broadcasting is limited to scalar operands in the
//! element-wise ops and to row-vector bias addition ([`Tape::add_row`]);
//! any other shape disagreement is reported as [`TensorError::ShapeMismatch`].

mod adam;
mod tape;
mod tensor;

pub use adam::{Adam, AdamState};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value produced by {op} (op #{index})")]
    NonFinite { op: &'static str, index: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("invalid shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: range {start}..{end} out of bounds for extent {extent}")]
    Range {
        op: &'static str,
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("optimiser state does not match parameter {index}: expected {expected} values, got {got}")]
    StateMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
}
