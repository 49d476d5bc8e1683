//! Mixture-of-experts adapters whose experts are sparse, conjugate-symmetric
//! complex Fourier coefficients, reconstructed into real weight updates via
//! the inverse 2-D DFT.
//!
//! The crate is organized around the pipeline:
//!
//! * [`spectral`] — transforms, Hermitian-symmetry machinery, truncation
//!   error and power-spectral-density computations.
//! * [`experts`] — band-limited spectral experts: Gaussian bandpass index
//!   sampling, coefficient storage, spatial reconstruction.
//! * [`router`] — top-k gating and the load-balancing auxiliary loss.
//! * [`moe`] — the adapted linear layer combining a frozen base matrix with
//!   gated, scaled expert updates.
//! * [`model`] / [`train`] — a small trainable stack (adapter sites plus a
//!   task head), analytic gradients, a finite-difference oracle, and an
//!   AdamW loop.
//! * [`tasks`], [`config`], [`checkpoint`], [`verify`], [`cli`] — synthetic
//!   benchmarks, run configuration, bit-exact persistence, the property
//!   suites, and the command-line front end.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experts;
pub mod harness;
pub mod matrix;
pub mod model;
pub mod moe;
pub mod parallel;
pub mod rank;
pub(crate) mod rng_util;
pub mod router;
pub mod spectral;
pub mod tasks;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
