//! Dense `f64` tensors with a small tape-based reverse-mode autodiff.
//!
//! Values live in [`Tensor`]; differentiable computations are expressed on
//! [`Var`], which records onto a [`Tape`] when any input is tracked.

mod tape;
mod tensor;

pub mod gradcheck;
pub mod ops;
pub mod optim;

pub use tape::{Gradients, Tape, Var};
pub use tensor::{strides_of, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: expected rank {expected}, got shape {got:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward root is not recorded on this tape")]
    Untracked,
}

impl TensorError {
    pub(crate) fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Self {
        Self::Shape {
            op,
            detail: format!("incompatible shapes {a:?} and {b:?}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
