//! Reverse-mode differentiation over dense row-major tensors.
//!
//! A [`Tape`] records every operation in creation order. Calling
//! [`Tape::backward`] on a scalar walks the nodes once in reverse and adds the
//! resulting gradients into the [`Param`] buffers that were recorded on it.

mod scalar;
mod tape;
mod tensor;

pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Param, Tensor};
