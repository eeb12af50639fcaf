//! Dense tensors with tape-based reverse-mode differentiation.

mod check;
mod tape;
mod tensor;

pub use check::{finite_diff_check, finite_diff_report, FdReport};
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tensor::gemm;
