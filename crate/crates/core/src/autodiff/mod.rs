//! Reverse-mode automatic differentiation over dense tensors.

pub mod gradcheck;
pub mod kernels;
pub mod optim;
mod sparse;
mod tape;

pub use sparse::SparseMatrix;
pub use tape::{BinaryKind, CustomOp, Gradients, Tape, UnaryKind, Var};
