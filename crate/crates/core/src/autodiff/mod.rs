//! Minimal reverse-mode automatic differentiation.

mod gradcheck;
mod matrix;
mod ops;
mod tape;

pub use gradcheck::{central_differences, grad_check};
pub use matrix::{sigmoid, Matrix};
pub use ops::{Eager, Ops};
pub use tape::{Gradients, Tape, Value};
