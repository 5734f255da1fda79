//! Meta-training of coordinate-wise LSTM learned optimizers.
//!
//! The crate covers the whole loop: a small reverse-mode autodiff tape, a
//! zoo of desk-scale optimizees, analytical optimizers, the learned
//! optimizer itself, truncated meta-training, a progressive-unrolling
//! curriculum, imitation of analytical teachers, self-improving mixed
//! trajectories, and a multi-seed evaluation harness.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::large_enum_variant)]

pub mod autodiff;
pub mod checks;
pub mod config;
pub mod curriculum;
pub mod error;
pub mod eval;
pub mod exec;
pub mod imitation;
pub mod l2o;
pub mod meta;
pub mod optimizee;
pub mod run;
pub mod seed;
pub mod teachers;
pub mod trajectory;
