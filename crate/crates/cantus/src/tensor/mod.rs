//! Dense array math with reverse-mode differentiation.
//!
//! [`NdArray`] is a shape-tagged contiguous buffer, [`Tape`] records a
//! computation graph whose [`Tape::backward`] pass accumulates gradients
//! for every parameter leaf, and [`Adam`] applies bias-corrected updates.
//! Training runs in `f32`; the same code instantiates at `f64` for
//! gradient verification (see [`gradcheck`]).

mod adam;
mod array;
pub mod gradcheck;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use array::{NdArray, Scalar};
pub use tape::{Gradients, Mode, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    LengthMismatch {
        op: &'static str,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("{op}: expected {expected}-d array, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("non-finite value encountered in {op}")]
    NotFinite { op: &'static str },
    #[error("index {index} out of range (bound {bound}) in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("invalid argument to {op}: {message}")]
    InvalidArgument { op: &'static str, message: String },
}

pub type Result<T> = std::result::Result<T, NumError>;
