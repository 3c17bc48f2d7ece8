//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Forward computations are recorded on a [`Tape`] in execution order;
//! [`Tape::backward`] replays the record in reverse. Parameters live in a
//! [`ParamStore`] and are bound onto a tape by name without copying.

mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointEntry, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{gradient_check, CoordinateSample, GradCheckReport};
pub use params::{Gradients, InitRange, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("expected {expected} values, got {actual}")]
    DataLength { expected: usize, actual: usize },
    #[error("unsupported tensor rank for shape {0:?}")]
    UnsupportedRank(Vec<usize>),
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<[usize; 2]>,
    },
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("softmax over an empty index set")]
    EmptySoftmax,
    #[error("{0}: operation needs at least one input")]
    NoInputs(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("parameter `{name}` has shape {actual:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: [usize; 2],
        actual: [usize; 2],
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
