//! Dense tensors, reverse-mode differentiation and the gradient-check harness.

pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{AttnLayout, RowRef, Tape, Var};
pub use tensor::{Scalar, Tensor};
