//! Dense tensors, the neural primitives, and reverse-mode differentiation.

mod autograd;
mod conv;
mod dense;
pub mod ften;
mod gradcheck;
pub mod init;
pub mod ops;
mod param;
mod real;

#[cfg(test)]
pub(crate) mod testing;

pub use autograd::{Grads, Tape, Var};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvSpec};
pub use dense::Tensor;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, Probe, REL_FLOOR};
pub use ops::{gelu, global_avg_pool, layer_norm_channels, simple_gate};
pub use param::{ParamId, ParamStore, Parameter};
pub use real::Real;
