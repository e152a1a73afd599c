//! Dense reverse-mode automatic differentiation.
//!
//! Values live in [`Tensor`]s. A forward pass records every operation on a
//! [`Tape`]; [`Var`] is a cheap handle into it. Trainable parameters are owned
//! by a [`ParamStore`], bound onto a tape for each step and updated with Adam
//! after [`Var::backward`].

mod check;
mod kernels;
mod ops;
mod params;
mod rng;
mod tape;
mod tensor;

pub use check::{finite_diff_check, max_rel_error, op_gradient_suite, FiniteDiffReport, OpCheck, FD_STEP};
pub use ops::{Segments, SparseOperator};
pub use params::{AdamConfig, Param, ParamStore};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Scalar type for all numerics. Double precision unless built with the
/// `f32` feature.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Probabilities are clamped to this floor before taking logarithms.
pub const PROB_FLOOR: Real = 1e-12;
