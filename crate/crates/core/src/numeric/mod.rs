//! Dense matrices, activations and a reverse-mode gradient tape.

mod gradcheck;
mod matrix;
pub mod ops;
mod scalar;
mod tape;

pub use gradcheck::grad_check;
pub use matrix::Matrix;
pub use ops::{
    gelu, layer_norm, layer_norm_rows, log_sum_exp, sigmoid, silu, silu_scalar, softmax_rows,
    softplus, Mask,
};
pub use scalar::{Precision, Scalar};
pub use tape::{FlopCounter, FlopKind, Gradients, Tape, Var};
