//! Evaluation over a grid of filter strengths and diffusion noise levels.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::protocol::{DefenseSpec, Protocol, ScoredAttack};
use super::report::EvalReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub sigma_y: f64,
    pub report: EvalReport,
}

/// Defense for one grid cell. A zero `lambda` drops the blurring stage and
/// a zero `sigma_y` drops the diffusion stage.
pub fn grid_defense(base: &DefenseSpec, lambda: f64, sigma_y: f64) -> DefenseSpec {
    let mut d = base.clone();
    d.lambda = lambda;
    if lambda == 0.0 {
        d.strategy = None;
    } else if d.strategy.is_none() {
        d.strategy = Some(crate::filters::Strategy::Iwmf);
    }
    d.sigma_y = (sigma_y > 0.0).then_some(sigma_y);
    d
}

/// Runs the protocol once per `(lambda, sigma_y)` cell, row-major in
/// `lambdas`. Non-adaptive attacks are crafted once against the bare model
/// and reused; adaptive attacks are crafted per cell.
pub fn run_sweep(
    protocol: &Protocol,
    base: &DefenseSpec,
    lambdas: &[f64],
    sigmas: &[f64],
) -> Result<Vec<SweepPoint>> {
    if lambdas.is_empty() || sigmas.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    let cfg = protocol.config();
    let none = DefenseSpec::none().with_seed(base.seed).build()?;
    let mut fixed: Vec<Option<ScoredAttack>> = Vec::new();
    for spec in &cfg.attacks {
        fixed.push(if spec.kind.is_adaptive() {
            None
        } else {
            Some(protocol.craft(spec, &none)?)
        });
    }
    let mut out = Vec::with_capacity(lambdas.len() * sigmas.len());
    for &lambda in lambdas {
        for &sigma_y in sigmas {
            let defense = grid_defense(base, lambda, sigma_y).build()?;
            let crafted = cfg
                .attacks
                .iter()
                .zip(&fixed)
                .map(|(spec, f)| match f {
                    Some(sa) => Ok(sa.clone()),
                    None => protocol.craft(spec, &defense),
                })
                .collect::<Result<Vec<_>>>()?;
            let (scores, source) = protocol.score(&defense, &crafted)?;
            let report = protocol.report(&defense, &scores, &source, &crafted, &cfg.condition)?;
            log::info!(
                "sweep lambda={lambda} sigma_y={sigma_y}: eer {:.4}",
                report.eer
            );
            out.push(SweepPoint {
                lambda,
                sigma_y,
                report,
            });
        }
    }
    Ok(out)
}

/// One CSV row per grid cell: clean EER and AUC, then FAR and EER per attack.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("lambda,sigma_y,tau,eer,auc");
    if let Some(first) = points.first() {
        for a in &first.report.attacks {
            let _ = write!(out, ",far_{0},eer_{0}", a.name);
        }
    }
    out.push('\n');
    for p in points {
        let r = &p.report;
        let _ = write!(
            out,
            "{},{},{},{},{}",
            p.lambda, p.sigma_y, r.tau, r.eer, r.auc
        );
        for a in &r.attacks {
            let _ = write!(out, ",{},{}", a.far, a.eer);
        }
        out.push('\n');
    }
    out
}
