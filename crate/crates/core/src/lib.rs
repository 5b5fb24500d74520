//! Finite-time stabilization of linear time-varying single-input systems by
//! sinusoidal dithering with unknown control direction.
//!
//! The pipeline: validate the problem data ([`problem`]), shrink the target
//! set to make room for the dither tube ([`geometry`]), synthesize the gain
//! product by a margin-maximizing semidefinite scan over the averaged system
//! ([`dlmi`]), estimate the minimum dithering frequency ([`frequency`]), and
//! verify by simulation ([`sim`]). The [`averaging`] module carries both the
//! closed-form averaged dynamics and a generic numeric averaging oracle used
//! to cross-validate it.

pub mod averaging;
pub mod builtin;
pub mod dlmi;
pub mod error;
pub mod frequency;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod problem;
pub mod schedule;
pub mod sdp;
pub mod sim;

pub use builtin::BuiltinExample;
pub use dlmi::{scan_gain, SynthesisResult};
pub use error::{Error, Result};
pub use frequency::{frequency_bound, FrequencyBound};
pub use geometry::{shrunk_gamma, ShrunkSpec};
pub use grid::TimeGrid;
pub use problem::{ControllerParams, FtsProblem};
pub use schedule::{MatrixSchedule, ScalarProfile};
pub use sim::{monte_carlo_verify, Trajectory, VerificationReport};
