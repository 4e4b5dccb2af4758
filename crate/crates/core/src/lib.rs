//! Desk-scale laboratory for policy optimization on miniature
//! hybrid-attention token policies.
//!
//! The crate trains tiny autoregressive models against synthetic verifiable
//! tasks and compares clipped-importance-sampling objectives (PPO-clip,
//! GRPO, CISPO and a unified masked form) under one roof, together with the
//! training-stability machinery those comparisons need: repetition-based
//! early truncation, staged length-window scheduling, precision
//! diagnostics, length-bias-aware reward monitoring, and a theoretical
//! inference-FLOPs model for hybrid versus full-softmax stacks.
//!
//! Start with the [`guide`] module for a narrative tour, or jump straight
//! to [`trainer::run_experiment`] for the end-to-end loop.

pub mod autodiff;
pub mod policy;
pub mod rollout;
pub mod tasks;
pub mod testkit;
pub mod seeding;

pub use autodiff::{Tensor, Var};
