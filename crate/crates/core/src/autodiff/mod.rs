//! Minimal reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor)s.
//!
//! A [`Tape`] is created per forward pass. Leaves are registered with
//! [`Tape::var`] / [`Tape::constant`], primitives are methods on [`Var`], and
//! [`Var::backward`] accumulates gradients into every leaf that requires one.

pub mod conv;
pub mod gradcheck;
mod ops;
mod tape;

pub use conv::Conv2dSpec;
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use ops::{concat, sigmoid, softplus, wrap_angle};
pub use tape::{BackwardCtx, BackwardFn, InputGrads, Tape, Var};
