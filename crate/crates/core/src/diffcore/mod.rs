//! Minimal reverse-mode differentiation over dense 2-D `f64` arrays.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, FiniteDiffReport, Recorded};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
