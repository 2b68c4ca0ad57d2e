//! Blob detection for vector-valued signals on triangle meshes.
//!
//! The pipeline smooths every signal channel by heat flow on the mesh
//! ([`scalespace`]), estimates per-channel covariant Hessians in each vertex's
//! tangent frame ([`hessian`]), combines them into a scalar blob response
//! ([`response`]), and picks spatio-scale extrema as blobs ([`detector`]).
//! Blob sets can then be turned into fixed-length bag-of-words descriptors
//! ([`descriptor`]). [`synth`] generates meshes and signals with known
//! answers, and [`pipeline`] wires everything together for the CLI.

pub mod descriptor;
pub mod detector;
pub mod error;
pub mod hessian;
pub mod mesh;
pub mod pipeline;
pub mod response;
pub mod scalespace;
pub mod synth;

pub use error::{Error, Result};

/// Fixed 17-significant-digit formatting used by every text output.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
