//! Diffusion-based restoration of blurred images.
//!
//! The blurred image is corrupted with Gaussian noise at `sigma_y` and then
//! restored by a denoising reverse chain that starts at the schedule entry
//! matching `sigma_y` (the observation itself is the chain's first state).
//! Each step below `sigma_y` samples
//!
//! ```text
//! x_t ~ N( x_hat + sqrt(1 - eta^2) * sigma_t * (y - x_hat) / sigma_y , eta^2 * sigma_t^2 )
//! ```
//!
//! where `x_hat` is the previous state itself (the literal recursion) or a
//! [`Denoiser`] prediction from it.

mod chain;
mod denoiser;
mod pipeline;
mod schedule;

pub use chain::{
    chain_start, corrupt, ddrm_denoise, ddrm_denoise_traced, noiseless_restore, reverse_step,
    run_chain, ChainTrace,
};
pub use denoiser::{Denoiser, DenoiserKind, ExternalDenoiser, GaussianShrinkage, IdentityDenoiser};
pub use pipeline::{purify, Defense, Randomization};
pub use schedule::{DiffusionConfig, SigmaSchedule, DEFAULT_ETA, DEFAULT_ETA_B, SIGMA_0};
