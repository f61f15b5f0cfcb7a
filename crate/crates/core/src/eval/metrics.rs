use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores are accepted when `score >= tau`.
fn nonempty<'a>(scores: &'a [f64], what: &'static str) -> Result<&'a [f64]> {
    if scores.is_empty() {
        return Err(Error::EmptyScores(what));
    }
    Ok(scores)
}

/// Fraction of genuine scores rejected at `tau`.
pub fn frr(genuine: &[f64], tau: f64) -> Result<f64> {
    let g = nonempty(genuine, "genuine")?;
    Ok(g.iter().filter(|&&s| s < tau).count() as f64 / g.len() as f64)
}

/// Fraction of imposter (or adversarial) scores accepted at `tau`. For
/// adversarial scores this is the attack success rate.
pub fn far(imposter: &[f64], tau: f64) -> Result<f64> {
    let i = nonempty(imposter, "imposter")?;
    Ok(i.iter().filter(|&&s| s >= tau).count() as f64 / i.len() as f64)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Thresholds that realize every distinct (FAR, FRR) pair: one below all
/// scores, the midpoints between consecutive distinct scores, and one above.
pub fn candidate_thresholds(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all = sorted(&[a, b].concat());
    all.dedup();
    let mut out = Vec::with_capacity(all.len() + 1);
    if all.is_empty() {
        return out;
    }
    out.push(all[0] - 1.0);
    out.extend(all.windows(2).map(|p| 0.5 * (p[0] + p[1])));
    out.push(all[all.len() - 1] + 1.0);
    out
}

/// Count of `sorted` entries strictly below `t`.
fn count_below(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&s| s < t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    /// `(FAR + FRR) / 2` at the chosen threshold.
    pub eer: f64,
    pub tau: f64,
    pub far: f64,
    pub frr: f64,
}

/// Sweeps [`candidate_thresholds`] and returns the first (lowest) threshold
/// minimizing `|FAR - FRR|`.
fn crossing(genuine: &[f64], other: &[f64]) -> EerPoint {
    let g = sorted(genuine);
    let o = sorted(other);
    let (ng, no) = (g.len() as f64, o.len() as f64);
    let mut best: Option<(f64, EerPoint)> = None;
    for tau in candidate_thresholds(&g, &o) {
        let frr = count_below(&g, tau) as f64 / ng;
        let far = (o.len() - count_below(&o, tau)) as f64 / no;
        let gap = (far - frr).abs();
        if best.as_ref().is_none_or(|(b, _)| gap < *b) {
            best = Some((
                gap,
                EerPoint {
                    eer: 0.5 * (far + frr),
                    tau,
                    far,
                    frr,
                },
            ));
        }
    }
    best.expect("non-empty score lists").1
}

pub fn eer(genuine: &[f64], imposter: &[f64]) -> Result<EerPoint> {
    nonempty(genuine, "genuine")?;
    nonempty(imposter, "imposter")?;
    Ok(crossing(genuine, imposter))
}

/// ROC points `(FAR, TAR)` from the highest threshold to the lowest.
pub fn roc_curve(genuine: &[f64], imposter: &[f64]) -> Result<Vec<(f64, f64)>> {
    nonempty(genuine, "genuine")?;
    nonempty(imposter, "imposter")?;
    let g = sorted(genuine);
    let o = sorted(imposter);
    let mut ts = candidate_thresholds(&g, &o);
    ts.reverse();
    Ok(ts
        .into_iter()
        .map(|t| {
            let far = (o.len() - count_below(&o, t)) as f64 / o.len() as f64;
            let tar = (g.len() - count_below(&g, t)) as f64 / g.len() as f64;
            (far, tar)
        })
        .collect())
}

/// Trapezoidal area under the ROC curve. The sum is carried in integer
/// counts so it equals the Mann-Whitney statistic (ties count one half).
pub fn auc(genuine: &[f64], imposter: &[f64]) -> Result<f64> {
    nonempty(genuine, "genuine")?;
    nonempty(imposter, "imposter")?;
    let g = sorted(genuine);
    let o = sorted(imposter);
    let mut ts = candidate_thresholds(&g, &o);
    ts.reverse();
    // twice the area, in units of 1 / (|g| |o|)
    let mut doubled: u128 = 0;
    let (mut prev_fa, mut prev_ta) = (0u128, 0u128);
    for t in ts {
        let fa = (o.len() - count_below(&o, t)) as u128;
        let ta = (g.len() - count_below(&g, t)) as u128;
        doubled += (fa - prev_fa) * (ta + prev_ta);
        prev_fa = fa;
        prev_ta = ta;
    }
    Ok(doubled as f64 / (2.0 * g.len() as f64 * o.len() as f64))
}

/// Which score list the genuine FRR is balanced against.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Condition {
    Imposter,
    Attack(String),
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Imposter => f.write_str("imposter"),
            Condition::Attack(name) => f.write_str(name),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Err(Error::InvalidConfig("empty condition".into())),
            "imposter" => Ok(Condition::Imposter),
            other => Ok(Condition::Attack(other.to_string())),
        }
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> Self {
        c.to_string()
    }
}

impl TryFrom<String> for Condition {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Cosine scores of one system.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
    /// Adversarial scores against the target identity, per attack name.
    pub attacks: BTreeMap<String, Vec<f64>>,
}

impl ScoreSet {
    pub fn condition_scores(&self, condition: &Condition) -> Result<&[f64]> {
        match condition {
            Condition::Imposter => Ok(&self.imposter),
            Condition::Attack(name) => self
                .attacks
                .get(name)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::MissingScores(name.clone())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .genuine
            .iter()
            .chain(&self.imposter)
            .chain(self.attacks.values().flatten());
        for &s in all {
            if !(-1.0..=1.0).contains(&s) {
                return Err(Error::InvalidConfig(format!("score {s} outside [-1, 1]")));
            }
        }
        Ok(())
    }
}

/// Threshold where `FRR_genuine` and `FAR_condition` are closest.
pub fn calibrate_threshold(scores: &ScoreSet, condition: &Condition) -> Result<f64> {
    let other = scores.condition_scores(condition)?;
    nonempty(&scores.genuine, "genuine")?;
    nonempty(other, "condition")?;
    Ok(crossing(&scores.genuine, other).tau)
}
