//! Low-rank estimation of varying coefficient models.
//!
//! The coefficient vector f(t) ∈ ℝᵖ of Y = Wᵀf(t) + σξ is expanded over an
//! orthonormal dictionary φ, f ≈ Aφ, and the p×l coordinate matrix A is
//! estimated by nuclear-norm penalized least squares. Around that estimator
//! the crate provides theory-driven tuning of λ and l, a synthetic scenario
//! generator and a Monte Carlo harness for error bounds and convergence
//! rates.

pub mod basis;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod solver;
pub mod stats;
pub mod tuning;

pub use basis::{ApproxSpec, DensityMeasure, Dictionary, DictionaryKind, DictionarySpec};
pub use error::{Result, VcmError};
pub use model::{CoordinateMatrix, Dataset, Observation, VcFunction};
pub use simulate::Scenario;
pub use solver::{SolverConfig, SolverReport};
