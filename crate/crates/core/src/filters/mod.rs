//! Blurring and purification filters.
//!
//! The centerpiece is the iterative window mean filter ([`iwmf`]): randomly
//! centered `s x s` windows whose pixels are all replaced by the window mean,
//! computed from the image as modified by every earlier window. The other
//! strategies are the baselines it is compared against.

mod histogram;
mod neighborhood;
mod noise;
mod window;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub use histogram::{diff_histogram, Histogram};
pub use neighborhood::{mean_filter, median_filter};
pub use noise::{gaussian_noise, pepper_noise};
pub use window::{
    apply_windows, iwmf, plan_windows, window_bounds, window_mean_noniter, window_median_iter,
    WindowOp, WindowPlan,
};

pub const DEFAULT_WINDOW_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Iwmf,
    WindowMeanNoniter,
    WindowMedianIter,
    MeanFilter,
    MedianFilter,
    GaussianNoise,
    PepperNoise,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Iwmf,
        Strategy::WindowMeanNoniter,
        Strategy::WindowMedianIter,
        Strategy::MeanFilter,
        Strategy::MedianFilter,
        Strategy::GaussianNoise,
        Strategy::PepperNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Iwmf => "iwmf",
            Strategy::WindowMeanNoniter => "window_mean_noniter",
            Strategy::WindowMedianIter => "window_median_iter",
            Strategy::MeanFilter => "mean_filter",
            Strategy::MedianFilter => "median_filter",
            Strategy::GaussianNoise => "gaussian_noise",
            Strategy::PepperNoise => "pepper_noise",
        }
    }

    /// Whether the output depends on the configured seed.
    pub fn is_random(self) -> bool {
        !matches!(self, Strategy::MeanFilter | Strategy::MedianFilter)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "strategy",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Window amount: `int(lambda * H * W)` windows per channel.
    pub lambda: f64,
    pub window_size: usize,
    pub strategy: Strategy,
    pub seed: u64,
    /// Gaussian sigma or pepper fraction, depending on `strategy`.
    #[serde(default)]
    pub noise_param: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            lambda: 0.25,
            window_size: DEFAULT_WINDOW_SIZE,
            strategy: Strategy::Iwmf,
            seed: 0,
            noise_param: 0.0,
        }
    }
}

impl FilterConfig {
    pub fn iwmf(lambda: f64, seed: u64) -> Self {
        Self {
            lambda,
            seed,
            ..Self::default()
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    /// Whether the filter provably returns its input unchanged.
    pub fn is_identity(&self) -> bool {
        match self.strategy {
            Strategy::Iwmf | Strategy::WindowMeanNoniter | Strategy::WindowMedianIter => {
                self.lambda == 0.0
            }
            Strategy::GaussianNoise | Strategy::PepperNoise => self.noise_param == 0.0,
            Strategy::MeanFilter | Strategy::MedianFilter => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.window_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "window size must be >= 2, got {}",
                self.window_size
            )));
        }
        if !(self.noise_param >= 0.0 && self.noise_param.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise parameter must be >= 0, got {}",
                self.noise_param
            )));
        }
        if self.strategy == Strategy::PepperNoise && self.noise_param > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "pepper fraction must be <= 1, got {}",
                self.noise_param
            )));
        }
        Ok(())
    }
}

/// Number of windows per channel: `int(lambda * h * w)`, truncated toward zero.
pub fn iters_for(lambda: f64, h: usize, w: usize) -> usize {
    (lambda * h as f64 * w as f64).trunc() as usize
}

/// Runs whichever strategy `cfg` selects.
pub fn apply_filter(img: &ImageTensor, cfg: &FilterConfig) -> Result<ImageTensor> {
    cfg.validate()?;
    match cfg.strategy {
        Strategy::Iwmf => iwmf(img, cfg),
        Strategy::WindowMeanNoniter => window_mean_noniter(img, cfg),
        Strategy::WindowMedianIter => window_median_iter(img, cfg),
        Strategy::MeanFilter => mean_filter(img, cfg.window_size),
        Strategy::MedianFilter => median_filter(img, cfg.window_size),
        Strategy::GaussianNoise => gaussian_noise(img, cfg.noise_param, cfg.seed),
        Strategy::PepperNoise => pepper_noise(img, cfg.noise_param, cfg.seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_count_arithmetic() {
        assert_eq!(iters_for(0.25, 112, 112), 3136);
        assert_eq!(iters_for(0.0, 112, 112), 0);
        assert_eq!(iters_for(0.40, 112, 112), 5017);
        assert_eq!(iters_for(0.25, 5, 5), 6);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("box_blur".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        assert!(FilterConfig::iwmf(-0.1, 0).validate().is_err());
        let c = FilterConfig {
            window_size: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = FilterConfig {
            strategy: Strategy::PepperNoise,
            noise_param: 1.5,
            ..FilterConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_window_size_is_three() {
        assert_eq!(FilterConfig::default().window_size, 3);
    }
}
