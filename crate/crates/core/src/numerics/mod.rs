//! Dense matrices, a reverse-mode gradient tape and plain SGD.

mod matrix;
mod sgd;
mod tape;

pub use matrix::{relu, sigmoid, sigmoid_scalar, softmax, softmax_rows, softmax_slice, Matrix};
pub use sgd::{sgd_step, Sgd, SgdOptions};
pub use tape::{Gradients, Reduction, Tape, Var, clamped_ln, LOG_EPS};
