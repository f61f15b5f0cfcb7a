use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest noise level of the reverse chain.
pub const SIGMA_0: f64 = 0.0001;
pub const DEFAULT_ETA: f64 = 0.85;
pub const DEFAULT_ETA_B: f64 = 1.0;
pub const DEFAULT_SIGMA_MAX: f64 = 0.30;
pub const DEFAULT_STEPS: usize = 100;

/// Strictly decreasing, positive noise levels `sigma_T > ... > sigma_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SigmaSchedule(Vec<f64>);

impl SigmaSchedule {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::InvalidConfig(
                "sigma schedule needs at least two entries".into(),
            ));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidConfig(
                "sigma schedule entries must be positive".into(),
            ));
        }
        if sigmas.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::InvalidConfig(
                "sigma schedule must be strictly decreasing".into(),
            ));
        }
        Ok(Self(sigmas))
    }

    /// `steps` geometrically spaced levels from `max` down to `min`.
    pub fn geometric(max: f64, min: f64, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidConfig(
                "geometric schedule needs >= 2 steps".into(),
            ));
        }
        let ratio = (min / max).ln() / (steps - 1) as f64;
        let mut v: Vec<f64> = (0..steps).map(|i| max * (ratio * i as f64).exp()).collect();
        v[0] = max;
        v[steps - 1] = min;
        Self::new(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0[0]
    }

    pub fn min(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Index of the entry closest to `sigma` (first one on ties).
    pub fn nearest(&self, sigma: f64) -> usize {
        let mut best = 0;
        for (i, s) in self.0.iter().enumerate() {
            if (s - sigma).abs() < (self.0[best] - sigma).abs() {
                best = i;
            }
        }
        best
    }
}

impl Default for SigmaSchedule {
    fn default() -> Self {
        Self::geometric(DEFAULT_SIGMA_MAX, SIGMA_0, DEFAULT_STEPS).expect("static schedule")
    }
}

impl TryFrom<Vec<f64>> for SigmaSchedule {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SigmaSchedule> for Vec<f64> {
    fn from(s: SigmaSchedule) -> Self {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Corruption noise level; 0 selects the degenerate single-draw mode.
    pub sigma_y: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Only affects chains started above `sigma_y`, which never happens here
    /// because the chain always starts at `sigma_T = sigma_y`.
    #[serde(default = "default_eta_b")]
    pub eta_b: f64,
    #[serde(default)]
    pub schedule: SigmaSchedule,
    #[serde(default)]
    pub seed: u64,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_eta_b() -> f64 {
    DEFAULT_ETA_B
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            sigma_y: 0.15,
            eta: DEFAULT_ETA,
            eta_b: DEFAULT_ETA_B,
            schedule: SigmaSchedule::default(),
            seed: 0,
        }
    }
}

impl DiffusionConfig {
    pub fn with_sigma_y(sigma_y: f64, seed: u64) -> Self {
        Self {
            sigma_y,
            seed,
            ..Self::default()
        }
    }

    pub fn sigma_0(&self) -> f64 {
        self.schedule.min()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_y >= 0.0 && self.sigma_y.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_y must be >= 0, got {}",
                self.sigma_y
            )));
        }
        for (name, v) in [("eta", self.eta), ("eta_b", self.eta_b)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}
