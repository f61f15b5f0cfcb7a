use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Bim,
    Sgadv,
    AdaptiveSgadv,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Fgsm,
        AttackKind::Pgd,
        AttackKind::Bim,
        AttackKind::Sgadv,
        AttackKind::AdaptiveSgadv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Bim => "bim",
            AttackKind::Sgadv => "sgadv",
            AttackKind::AdaptiveSgadv => "adaptive-sgadv",
        }
    }

    pub fn is_adaptive(self) -> bool {
        self == AttackKind::AdaptiveSgadv
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "attack",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub t_max: usize,
    pub tau_conv: f64,
    pub eot_samples: usize,
    /// Start from `source + U(-eps, eps)` instead of the source.
    pub random_start: bool,
    pub seed: u64,
}

impl AttackConfig {
    /// Standard settings: FGSM eps 0.03; PGD eps 0.03, alpha 0.001, 40 steps;
    /// SGADV eps 0.03, alpha 0.001, 1000 steps, tau_conv 0.0001;
    /// BIM eps 4/255, alpha 0.001, 20 steps.
    pub fn preset(kind: AttackKind) -> Self {
        let base = AttackConfig {
            epsilon: 0.03,
            alpha: 0.001,
            t_max: 40,
            tau_conv: 0.0001,
            eot_samples: 1,
            random_start: true,
            seed: 0,
        };
        match kind {
            AttackKind::Fgsm => AttackConfig {
                alpha: 0.03,
                t_max: 1,
                random_start: false,
                ..base
            },
            AttackKind::Pgd => base,
            AttackKind::Bim => AttackConfig {
                epsilon: 4.0 / 255.0,
                t_max: 20,
                random_start: false,
                ..base
            },
            AttackKind::Sgadv | AttackKind::AdaptiveSgadv => AttackConfig {
                t_max: 1000,
                ..base
            },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if self.t_max < 1 {
            return Err(Error::InvalidConfig("t_max must be >= 1".into()));
        }
        if self.eot_samples < 1 {
            return Err(Error::InvalidConfig("eot_samples must be >= 1".into()));
        }
        if self.tau_conv.is_nan() || self.tau_conv < 0.0 {
            return Err(Error::InvalidConfig("tau_conv must be >= 0".into()));
        }
        Ok(())
    }
}
