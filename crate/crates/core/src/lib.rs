//! Adversarial purification with the iterative window mean filter.
//!
//! * [`filters`]: the iterative window mean filter and its baselines.
//! * [`diffusion`]: Gaussian corruption plus the denoising reverse chain.
//! * [`verifier`]: a differentiable toy feature extractor.
//! * [`attacks`]: FGSM, PGD, BIM, SGADV, the adaptive SGADV and EOT.
//! * [`eval`]: FRR/FAR/EER/AUC, threshold calibration and the protocol runner.
//! * [`bench`]: timing harness for purification pipelines.

pub mod attacks;
pub mod bench;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod filters;
pub mod io;
pub mod rng;
pub mod tensor;
pub mod verifier;

pub use error::{Error, Result};
pub use io::{load_image, save_image};
pub use rng::RngStream;
pub use tensor::{clamp01, ImageTensor};
