//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! Everything in the crate that needs a gradient — the policy network and
//! all training objectives — is built on [`Tape`] and [`Var`]. The forward
//! pass runs eagerly while the graph is traced; [`Tape::backward`] then
//! accumulates gradients for every differentiable leaf in a fixed canonical
//! order, so results never depend on evaluation scheduling.
//!
//! Two properties are load-bearing for the rest of the crate:
//!
//! * forward evaluation is bitwise deterministic given identical inputs and
//!   tape precision, because all arithmetic goes through the fixed-order
//!   [`kernels`] shared with the sampling engine;
//! * NaN/Inf anywhere is an error state, surfaced through
//!   [`Tape::check_finite`] / [`Tape::backward`], never silently propagated.

mod finite_diff;
pub mod kernels;
mod tape;
mod tensor;

pub use finite_diff::{finite_diff_grad, grads_close, max_rel_err};
pub use kernels::HeadKernel;
pub use tape::{Gradients, Precision, Tape, Var};
pub use tensor::Tensor;

/// Errors from graph evaluation and differentiation.
#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("non-finite gradient produced during backward")]
    NonFiniteGradient,
}
