//! Training-free video object editing primitives on rectified-flow transformers.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`] dense f32 tensors, row kernels and a documented seeded RNG.
//! * [`velocity`] velocity fields: closed-form analytic fields and a seeded toy
//!   diffusion transformer with attention taps.
//! * [`solver`] Euler and second-order (Taylor) rectified-flow integration in both
//!   sampling and inversion directions.
//! * [`engine`] dual-path denoising where the editing path's self-attention is
//!   enriched with the reconstruction path's keys and values.
//! * [`probe`] guidance-responsiveness profiling and vital layer selection.
//! * [`metrics`] PSNR, SSIM, relative error and convergence order estimation.
//! * [`workbench`] synthetic videos, first-frame edits, the tensor container and PGM export.

pub mod engine;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod probe;
pub mod solver;
pub mod velocity;
pub mod workbench;

pub use error::{Error, Result};
pub use numerics::{Rng, Tensor};
