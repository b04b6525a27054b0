//! Minimum time functions of Hörmander systems.
//!
//! The crate works with polynomial vector fields `X_1, …, X_N` on `ℝ^n` and a
//! bounded domain `Ω = {Φ < 0}`. It computes Lie hull data, characteristic
//! boundary points and symplecticity of the characteristic set, solves
//! `Σ_j (X_j T)² = 1` with `T = 0` on `∂Ω`, traces Pontryagin extremals and
//! singular arcs, and measures where `T` fails to be Lipschitz.

pub mod charset;
pub mod diagnostics;
pub mod domain;
pub mod eikonal;
pub mod error;
pub mod extremal;
pub mod lie;
pub mod linalg;
pub mod pipeline;
pub mod poly;
pub mod scenario;
pub mod tolerances;

pub use error::{Error, Result};
