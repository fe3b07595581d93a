//! Spectra of 2D acoustic waveguides with penetrable obstacles.
//!
//! The waveguide is the strip `(x, y) ∈ ℝ × (0, 1)` with Neumann walls and a
//! bounded region where the index `γ` differs from 1. Two non-selfadjoint
//! operators are discretized with P2 finite elements on a truncated strip:
//!
//! * the classical complex-scaled operator (outgoing scaling in both leads),
//!   whose isolated real eigenvalues `k²` are trapped modes and whose complex
//!   ones are resonances;
//! * the conjugated-scaling operator (ingoing scaling on the left lead,
//!   outgoing on the right), whose isolated real eigenvalues are trapped
//!   modes *or* reflectionless modes.
//!
//! The [`scattering`] module solves the physical reflection-transmission
//! problem directly and is used to cross-validate the reflectionless
//! eigenvalues against the reflection matrix `R(k)`.

pub mod assembly;
pub mod cli;
pub mod config;
pub mod eigensolver;
pub mod mesh;
pub mod model;
pub mod scattering;
pub mod spectra;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
