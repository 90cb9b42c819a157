//! Dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its value; [`Tape::backward`] walks the nodes in reverse creation order
//! and accumulates gradients into every node that requires one. Values are
//! 2-D (`rows x cols`); vectors are single rows.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, GradChecker};
pub use tape::{Axis, Tape, Var};
pub use tensor::{masked_softmax_row, sigmoid, Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("masked softmax row {row} has no unmasked entry")]
    AllMasked { row: usize },
    #[error("backward needs a 1x1 loss, got {shape:?}")]
    NotScalarLoss { shape: Vec<usize> },
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
}
