//! Differentiable operations on [`Var`](crate::Var).
//!
//! Every op computes its forward value eagerly and records a backward closure
//! when at least one input is tracked.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod pool;
mod reduce;
mod resize;
mod shape;
mod softmax;

pub use conv::Conv2dSpec;
pub use elementwise::broadcast_shape;
pub use norm::BatchStats;
