use std::fmt;
use std::sync::Arc;

use crate::error::Result;
use crate::filters::{apply_filter, FilterConfig};
use crate::rng::{derive_seed, RngStream};
use crate::tensor::ImageTensor;

use super::chain::ddrm_denoise;
use super::denoiser::{Denoiser, IdentityDenoiser};
use super::schedule::DiffusionConfig;

/// Blur with `fcfg`, then restore with the diffusion chain when `dcfg` is
/// given. Without `dcfg` this is the plain filter defense.
pub fn purify(
    img: &ImageTensor,
    fcfg: Option<&FilterConfig>,
    dcfg: Option<&DiffusionConfig>,
    denoiser: Option<&dyn Denoiser>,
) -> Result<ImageTensor> {
    let blurred = match fcfg {
        Some(f) => apply_filter(img, f)?,
        None => img.clone(),
    };
    match dcfg {
        Some(d) => ddrm_denoise(&blurred, d, denoiser),
        None => Ok(blurred),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Randomization {
    /// Every call reuses the configured seeds.
    Fixed,
    /// Every call draws fresh seeds from the caller's stream.
    PerCall,
}

/// A purification pipeline with its randomization policy.
#[derive(Clone)]
pub struct Defense {
    pub filter: Option<FilterConfig>,
    pub diffusion: Option<DiffusionConfig>,
    pub denoiser: Arc<dyn Denoiser>,
    pub randomization: Randomization,
}

impl fmt::Debug for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Defense")
            .field("filter", &self.filter)
            .field("diffusion", &self.diffusion)
            .field("denoiser", &self.denoiser.name())
            .field("randomization", &self.randomization)
            .finish()
    }
}

impl Defense {
    pub fn new(filter: Option<FilterConfig>, diffusion: Option<DiffusionConfig>) -> Self {
        Self {
            filter,
            diffusion,
            denoiser: Arc::new(IdentityDenoiser),
            randomization: Randomization::PerCall,
        }
    }

    /// No purification at all.
    pub fn none() -> Self {
        Self::new(None, None)
    }

    pub fn iwmf(lambda: f64, seed: u64) -> Self {
        Self::new(Some(FilterConfig::iwmf(lambda, seed)), None)
    }

    pub fn iwmf_diff(lambda: f64, sigma_y: f64, seed: u64) -> Self {
        Self::new(
            Some(FilterConfig::iwmf(lambda, derive_seed(seed, 0))),
            Some(DiffusionConfig::with_sigma_y(sigma_y, derive_seed(seed, 1))),
        )
    }

    /// Diffusion only, the `lambda = 0` case.
    pub fn diffpure(sigma_y: f64, seed: u64) -> Self {
        Self::new(None, Some(DiffusionConfig::with_sigma_y(sigma_y, seed)))
    }

    pub fn with_denoiser(mut self, denoiser: Arc<dyn Denoiser>) -> Self {
        self.denoiser = denoiser;
        self
    }

    pub fn with_randomization(mut self, randomization: Randomization) -> Self {
        self.randomization = randomization;
        self
    }

    pub fn is_identity(&self) -> bool {
        self.filter.as_ref().is_none_or(FilterConfig::is_identity) && self.diffusion.is_none()
    }

    /// Whether two calls on the same input can differ.
    pub fn is_randomized(&self) -> bool {
        self.randomization == Randomization::PerCall
            && (self.diffusion.is_some()
                || self.filter.as_ref().is_some_and(|f| f.strategy.is_random()))
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(f) = &self.filter {
            parts.push(format!(
                "{}(lambda={}, s={})",
                f.strategy, f.lambda, f.window_size
            ));
        }
        if let Some(d) = &self.diffusion {
            parts.push(format!(
                "diffusion(sigma_y={}, {})",
                d.sigma_y,
                self.denoiser.name()
            ));
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join(" + ")
        }
    }

    /// Purifies `img`. Per-call randomization draws one `u64` from `rng`.
    pub fn apply(&self, img: &ImageTensor, rng: &mut RngStream) -> Result<ImageTensor> {
        if self.filter.is_none() && self.diffusion.is_none() {
            return Ok(img.clone());
        }
        let mut filter = self.filter.clone();
        let mut diffusion = self.diffusion.clone();
        if self.randomization == Randomization::PerCall {
            let call = rng.next_u64();
            if let Some(f) = filter.as_mut() {
                f.seed = derive_seed(call, 0);
            }
            if let Some(d) = diffusion.as_mut() {
                d.seed = derive_seed(call, 1);
            }
        }
        purify(
            img,
            filter.as_ref(),
            diffusion.as_ref(),
            Some(self.denoiser.as_ref()),
        )
    }
}
