//! Window-level reconstruction of wideband MIMO channels from sparse
//! frequency-hopping pilots.
//!
//! The channel window `H` (receive × subcarrier × snapshot) is represented in
//! the Doppler-delay-angle (DDA) domain through a unitary space-angle DFT
//! dictionary, an oversampled delay dictionary and a unitary DFT along the
//! window-time axis. Reconstruction solves a weighted least-squares problem
//! against the pilot observations with a transform-domain prior, using a
//! closed-form data-consistency step that never inverts an `n_τ × n_τ`
//! matrix.
//!
//! Module map:
//!
//! - [`channel_sim`]: system geometry, multipath synthesis, noisy pilot observation.
//! - [`pilots`]: hopping schedules (standard cyclic and minimum covering radius).
//! - [`transforms`]: dictionaries, sensing matrices and domain maps.
//! - [`dc`]: the closed-form data-consistency update.
//! - [`solvers`]: LS, FISTA, ADMM and the unfolded forward pass.
//! - [`denoiser`]: residual Conv3D / B-spline / Conv3D prior (inference only).
//! - [`eval`]: NMSE, all-offset protocol, sweeps and tuning drivers.
//! - [`dataset`], [`config`], [`verify`]: persistence, configuration and self-checks.
//!
//! Tensor layout everywhere is `[receive|angle][frequency|delay][time|doppler]`,
//! row-major, so the window axis is the fastest-varying one.

pub mod channel_sim;
pub mod config;
pub mod dataset;
pub mod dc;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod pilots;
pub mod rng;
pub mod solvers;
pub mod transforms;
pub mod verify;

pub use error::{Error, Result};

/// Complex sample type used for every tensor in the crate.
pub type C64 = num_complex::Complex64;
