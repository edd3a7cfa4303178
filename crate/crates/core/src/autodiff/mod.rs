//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive as it is evaluated. [`Tape::backward`]
//! then sweeps the records in reverse and returns [`Gradients`] for every
//! node. Discrete choices (kNN, argmax, Gumbel sampling) are made on plain
//! values outside the tape and enter it only as constants or row indices.

mod check;
mod tape;
mod tensor;

pub use check::{grad_check, GradCheckReport};
pub use tape::{Gradients, Tape, Var, ATANH_CLAMP};
pub use tensor::Tensor;
