use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackMetrics {
    pub name: String,
    /// Attack success rate at the calibrated threshold.
    pub far: f64,
    /// Rejection rate of adversarial images against their source identity.
    pub frr: f64,
    /// Equal error rate of genuine versus adversarial scores.
    pub eer: f64,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub defense: String,
    pub condition: String,
    pub tau: f64,
    pub frr_genuine: f64,
    pub far_imposter: f64,
    pub eer: f64,
    pub eer_tau: f64,
    pub auc: f64,
    pub attacks: Vec<AttackMetrics>,
    /// `[FAR, TAR]` points of the genuine/imposter ROC curve.
    pub curve: Vec<[f64; 2]>,
}

impl EvalReport {
    pub fn attack(&self, name: &str) -> Option<&AttackMetrics> {
        self.attacks.iter().find(|a| a.name == name)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("far,tar\n");
        for [far, tar] in &self.curve {
            let _ = writeln!(out, "{far},{tar}");
        }
        out
    }

    /// Human-readable summary table.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "defense   {}", self.defense);
        let _ = writeln!(out, "condition FRR_genuine = FAR_{}", self.condition);
        let _ = writeln!(out, "tau       {:.4}", self.tau);
        let _ = writeln!(out, "{:<16}{:>8}{:>8}{:>8}", "scores", "FAR", "FRR", "EER");
        let _ = writeln!(
            out,
            "{:<16}{:>8.3}{:>8.3}{:>8.3}",
            "genuine/imposter", self.far_imposter, self.frr_genuine, self.eer
        );
        for a in &self.attacks {
            let _ = writeln!(
                out,
                "{:<16}{:>8.3}{:>8.3}{:>8.3}",
                a.name, a.far, a.frr, a.eer
            );
        }
        let _ = writeln!(out, "AUC       {:.4}", self.auc);
        out
    }
}
