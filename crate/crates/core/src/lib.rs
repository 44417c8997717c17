//! Feedback-gain synthesis for collective steering of linear ensembles.
//!
//! A collection of identical agents `ẋ = Ax + Bu` driven by one broadcast
//! linear feedback `u = K_t x` moves as `X_t = Φ_t X_0`, where the state
//! transition matrix obeys the right-invariant bilinear equation
//! `Φ̇ = (A + B K_t) Φ` on `GL⁺(n)`. This crate synthesizes time-varying gains
//! `K_t` that steer `Φ` from the identity to a prescribed target, either in
//! free time (near-identity legs) or in any prescribed time (legs whose
//! Gramian-conjugate is symmetric positive definite), steers covariances on
//! `Sym⁺(n)`, evaluates contraction-based nonlinear rearrangement feedback, and
//! verifies every plan by direct simulation.
//!
//! Module map:
//!
//! - [`matfun`]: dense matrix functions (exponential, SPD/rotation logarithms,
//!   square roots, polar decomposition).
//! - [`sysmod`]: plant model, periodizing gain, controllability Gramians.
//! - [`segment`]: one minimum-energy steering leg and its feedback form.
//! - [`factorizer`]: splitting a target into steerable factors.
//! - [`planner`]: end-to-end gain schedules.
//! - [`simverify`]: RK4 verification of schedules and swarms.
//! - [`diffeo`]: fixed-point feedback for nonlinear rearrangements.

// Guards are written `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffeo;
pub mod error;
pub mod factorizer;
pub mod matfun;
pub mod planner;
pub mod segment;
pub mod simverify;
pub mod sysmod;
pub mod tolerances;

pub use error::{Result, SteerError};

/// Dense real matrix used throughout.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type Vector = nalgebra::DVector<f64>;
