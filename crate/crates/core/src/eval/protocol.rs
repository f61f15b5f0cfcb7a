//! One "system": a verifier, a defense and a threshold shared by every attack.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackConfig, AttackKind};
use crate::diffusion::{Defense, DenoiserKind, DiffusionConfig, Randomization};
use crate::error::{Error, Result};
use crate::filters::{FilterConfig, Strategy, DEFAULT_WINDOW_SIZE};
use crate::rng::{derive_seed, RngStream};
use crate::tensor::ImageTensor;
use crate::verifier::{cosine_similarity, Embedding, ExtractorSpec, ToyExtractor};

use super::metrics::{auc, calibrate_threshold, eer, far, frr, roc_curve, Condition, ScoreSet};
use super::report::{AttackMetrics, EvalReport};
use super::synth::{IdentityGenerator, DEFAULT_AMPLITUDE};

fn default_window_size() -> usize {
    DEFAULT_WINDOW_SIZE
}

fn default_denoiser() -> String {
    "identity".into()
}

fn default_true() -> bool {
    true
}

/// Serializable description of a [`Defense`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSpec {
    /// Blurring strategy; `None` skips blurring.
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_window_size")]
    pub window_size: usize,
    #[serde(default)]
    pub noise_param: f64,
    /// Diffusion noise level; `None` skips the diffusion stage.
    #[serde(default)]
    pub sigma_y: Option<f64>,
    #[serde(default = "default_denoiser")]
    pub denoiser: String,
    /// Draw fresh filter and diffusion seeds on every call.
    #[serde(default = "default_true")]
    pub randomize: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DefenseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl DefenseSpec {
    pub fn none() -> Self {
        Self {
            strategy: None,
            lambda: 0.0,
            window_size: DEFAULT_WINDOW_SIZE,
            noise_param: 0.0,
            sigma_y: None,
            denoiser: default_denoiser(),
            randomize: true,
            seed: 0,
        }
    }

    pub fn iwmf(lambda: f64) -> Self {
        Self {
            strategy: Some(Strategy::Iwmf),
            lambda,
            ..Self::none()
        }
    }

    pub fn iwmf_diff(lambda: f64, sigma_y: f64) -> Self {
        Self {
            sigma_y: Some(sigma_y),
            ..Self::iwmf(lambda)
        }
    }

    pub fn diffpure(sigma_y: f64) -> Self {
        Self {
            sigma_y: Some(sigma_y),
            ..Self::none()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn build(&self) -> Result<Defense> {
        let filter = match self.strategy {
            Some(strategy) => {
                let f = FilterConfig {
                    lambda: self.lambda,
                    window_size: self.window_size,
                    strategy,
                    seed: derive_seed(self.seed, 0),
                    noise_param: self.noise_param,
                };
                f.validate()?;
                Some(f)
            }
            None => None,
        };
        let diffusion = match self.sigma_y {
            Some(s) => {
                let d = DiffusionConfig::with_sigma_y(s, derive_seed(self.seed, 1));
                d.validate()?;
                Some(d)
            }
            None => None,
        };
        let denoiser = self.denoiser.parse::<DenoiserKind>()?.build()?;
        let randomization = if self.randomize {
            Randomization::PerCall
        } else {
            Randomization::Fixed
        };
        Ok(Defense::new(filter, diffusion)
            .with_denoiser(denoiser)
            .with_randomization(randomization))
    }
}

/// Named standard systems: defense settings plus the calibration condition.
/// `none` balances against imposters, the defended systems against SGADV.
pub const SYSTEMS: [&str; 4] = ["none", "diffpure", "iwmf", "iwmf-diff"];

/// Defense and calibration condition of a named system: `none`;
/// `diffpure` (sigma_y 0.15); `iwmf` (lambda 0.40, s 3); `iwmf-diff`
/// (lambda 0.25, sigma_y 0.15, s 3).
pub fn system_preset(name: &str) -> Result<(DefenseSpec, Condition)> {
    let sgadv = || Condition::Attack(AttackKind::Sgadv.name().to_string());
    match name {
        "none" => Ok((DefenseSpec::none(), Condition::Imposter)),
        "diffpure" => Ok((DefenseSpec::diffpure(0.15), sgadv())),
        "iwmf" => Ok((DefenseSpec::iwmf(0.40), sgadv())),
        "iwmf-diff" => Ok((DefenseSpec::iwmf_diff(0.25, 0.15), sgadv())),
        other => Err(Error::Unknown {
            kind: "system",
            name: other.to_string(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub config: AttackConfig,
}

impl AttackSpec {
    pub fn preset(kind: AttackKind) -> Self {
        Self {
            kind,
            config: AttackConfig::preset(kind),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub image_size: usize,
    pub model_seed: u64,
    pub data_seed: u64,
    pub subjects: usize,
    /// Blob amplitude of the synthetic identities.
    pub amplitude: f64,
    pub genuine_pairs: usize,
    pub imposter_pairs: usize,
    pub attack_pairs: usize,
    pub attacks: Vec<AttackSpec>,
    pub defense: DefenseSpec,
    pub condition: Condition,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            model_seed: 1,
            data_seed: 2,
            subjects: 20,
            amplitude: DEFAULT_AMPLITUDE,
            genuine_pairs: 100,
            imposter_pairs: 100,
            attack_pairs: 100,
            attacks: vec![AttackSpec::preset(AttackKind::Sgadv)],
            defense: DefenseSpec::none(),
            condition: Condition::Imposter,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::InvalidConfig(
                "protocol needs at least 2 subjects".into(),
            ));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidConfig(
                "identity amplitude must be > 0".into(),
            ));
        }
        if self.genuine_pairs == 0 || self.imposter_pairs == 0 {
            return Err(Error::InvalidConfig(
                "protocol needs genuine and imposter pairs".into(),
            ));
        }
        if !self.attacks.is_empty() && self.attack_pairs == 0 {
            return Err(Error::InvalidConfig(
                "attacks configured without attack pairs".into(),
            ));
        }
        for a in &self.attacks {
            a.config.validate()?;
        }
        if let Condition::Attack(name) = &self.condition {
            if !self.attacks.iter().any(|a| a.kind.name() == name) {
                return Err(Error::MissingScores(name.clone()));
            }
        }
        Ok(())
    }
}

/// Adversarial images of one attack over the protocol's attack pairs.
#[derive(Debug, Clone)]
pub struct ScoredAttack {
    pub name: String,
    pub adversarial: Vec<ImageTensor>,
    pub mean_iterations: f64,
}

/// Subjects, pairs and model of one protocol run.
pub struct Protocol {
    cfg: ProtocolConfig,
    model: ToyExtractor,
    enrollments: Vec<ImageTensor>,
    templates: Vec<Embedding>,
    genuine: Vec<(usize, ImageTensor)>,
    imposter: Vec<(usize, ImageTensor)>,
    /// `(source subject, target subject, source image)`
    attack_pairs: Vec<(usize, usize, ImageTensor)>,
}

fn distinct_pair(rng: &mut RngStream, n: usize) -> (usize, usize) {
    let a = rng.index_below(n);
    let b = (a + 1 + rng.index_below(n - 1)) % n;
    (a, b)
}

fn map_items<T, R>(
    items: &[T],
    parallel: bool,
    f: impl Fn(usize, &T) -> Result<R> + Sync,
) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
{
    if parallel {
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    } else {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

const GENUINE_TAG: u64 = 1 << 40;
const IMPOSTER_TAG: u64 = 2 << 40;
const ATTACK_TAG: u64 = 3 << 40;

impl Protocol {
    pub fn new(cfg: ProtocolConfig) -> Result<Self> {
        cfg.validate()?;
        let shape = (3, cfg.image_size, cfg.image_size);
        let model = ToyExtractor::new(
            ExtractorSpec::with_size(cfg.image_size, cfg.image_size),
            cfg.model_seed,
        )?;
        let gen = IdentityGenerator {
            amplitude: cfg.amplitude,
            ..IdentityGenerator::new(shape, cfg.data_seed)
        };
        let subjects: Vec<_> = (0..cfg.subjects as u64).map(|i| gen.subject(i)).collect();
        let enrollments = subjects
            .iter()
            .map(|s| s.enrollment())
            .collect::<Result<Vec<_>>>()?;
        let templates = enrollments
            .iter()
            .map(|e| model.extract(e))
            .collect::<Result<Vec<_>>>()?;

        let n = cfg.subjects;
        let genuine = (0..cfg.genuine_pairs)
            .map(|p| Ok((p % n, subjects[p % n].capture((p / n) as u64)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = RngStream::new(derive_seed(cfg.data_seed, IMPOSTER_TAG));
        let imposter = (0..cfg.imposter_pairs)
            .map(|p| {
                let (probe, claimed) = distinct_pair(&mut rng, n);
                Ok((claimed, subjects[probe].capture(1000 + p as u64)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = RngStream::new(derive_seed(cfg.data_seed, ATTACK_TAG));
        let attack_pairs = (0..cfg.attack_pairs)
            .map(|p| {
                let (src, tgt) = distinct_pair(&mut rng, n);
                Ok((src, tgt, subjects[src].capture(2000 + p as u64)?))
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            cfg,
            model,
            enrollments,
            templates,
            genuine,
            imposter,
            attack_pairs,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ToyExtractor {
        &self.model
    }

    pub fn enrollment(&self, subject: usize) -> &ImageTensor {
        &self.enrollments[subject]
    }

    /// `(source subject, target subject, source image)` of every attack pair.
    pub fn attack_pairs(&self) -> &[(usize, usize, ImageTensor)] {
        &self.attack_pairs
    }

    /// Crafts adversarial images for every attack pair. `defense` is used
    /// only by adaptive attacks; the others attack the bare model.
    pub fn craft(&self, spec: &AttackSpec, defense: &Defense) -> Result<ScoredAttack> {
        let parallel = !spec.kind.is_adaptive() || defense.denoiser.thread_safe();
        let results = map_items(&self.attack_pairs, parallel, |p, (_, tgt, src)| {
            let cfg = spec
                .config
                .clone()
                .with_seed(derive_seed(spec.config.seed, p as u64));
            run_attack(
                spec.kind,
                &self.model,
                src,
                &self.enrollments[*tgt],
                &cfg,
                defense,
            )
        })?;
        let mean_iterations = results
            .iter()
            .map(|r| r.iterations_used as f64)
            .sum::<f64>()
            / results.len().max(1) as f64;
        Ok(ScoredAttack {
            name: spec.kind.name().to_string(),
            adversarial: results.into_iter().map(|r| r.adversarial).collect(),
            mean_iterations,
        })
    }

    fn score_one(
        &self,
        defense: &Defense,
        img: &ImageTensor,
        tag: u64,
        template: usize,
    ) -> Result<f64> {
        let mut rng = RngStream::new(derive_seed(derive_seed(self.cfg.defense.seed, 7), tag));
        let purified = defense.apply(img, &mut rng)?;
        let e = self.model.extract(&purified)?;
        Ok(cosine_similarity(&e, &self.templates[template]))
    }

    /// Scores all pairs through `defense`. Returns the score set plus, per
    /// attack, the adversarial scores against the source identity.
    pub fn score(
        &self,
        defense: &Defense,
        crafted: &[ScoredAttack],
    ) -> Result<(ScoreSet, BTreeMap<String, Vec<f64>>)> {
        let parallel = defense.denoiser.thread_safe();
        let genuine = map_items(&self.genuine, parallel, |p, (s, img)| {
            self.score_one(defense, img, GENUINE_TAG + p as u64, *s)
        })?;
        let imposter = map_items(&self.imposter, parallel, |p, (claimed, img)| {
            self.score_one(defense, img, IMPOSTER_TAG + p as u64, *claimed)
        })?;
        let mut attacks = BTreeMap::new();
        let mut source_scores = BTreeMap::new();
        for (a, sa) in crafted.iter().enumerate() {
            let pairs: Vec<_> = self.attack_pairs.iter().zip(&sa.adversarial).collect();
            let both = map_items(&pairs, parallel, |p, ((src, tgt, _), adv)| {
                let tag = ATTACK_TAG + ((a as u64) << 20) + p as u64;
                let mut rng =
                    RngStream::new(derive_seed(derive_seed(self.cfg.defense.seed, 7), tag));
                let purified = defense.apply(adv, &mut rng)?;
                let e = self.model.extract(&purified)?;
                Ok((
                    cosine_similarity(&e, &self.templates[*tgt]),
                    cosine_similarity(&e, &self.templates[*src]),
                ))
            })?;
            let (to_target, to_source): (Vec<f64>, Vec<f64>) = both.into_iter().unzip();
            attacks.insert(sa.name.clone(), to_target);
            source_scores.insert(sa.name.clone(), to_source);
        }
        let set = ScoreSet {
            genuine,
            imposter,
            attacks,
        };
        set.validate()?;
        Ok((set, source_scores))
    }

    /// Calibrates the threshold once and evaluates every attack at it.
    pub fn report(
        &self,
        defense: &Defense,
        scores: &ScoreSet,
        source_scores: &BTreeMap<String, Vec<f64>>,
        crafted: &[ScoredAttack],
        condition: &Condition,
    ) -> Result<EvalReport> {
        let tau = calibrate_threshold(scores, condition)?;
        let point = eer(&scores.genuine, &scores.imposter)?;
        let mut attacks = Vec::new();
        for sa in crafted {
            let to_target = &scores.attacks[&sa.name];
            attacks.push(AttackMetrics {
                name: sa.name.clone(),
                far: far(to_target, tau)?,
                frr: frr(&source_scores[&sa.name], tau)?,
                eer: eer(&scores.genuine, to_target)?.eer,
                mean_iterations: sa.mean_iterations,
            });
        }
        Ok(EvalReport {
            defense: defense.describe(),
            condition: condition.to_string(),
            tau,
            frr_genuine: frr(&scores.genuine, tau)?,
            far_imposter: far(&scores.imposter, tau)?,
            eer: point.eer,
            eer_tau: point.tau,
            auc: auc(&scores.genuine, &scores.imposter)?,
            attacks,
            curve: roc_curve(&scores.genuine, &scores.imposter)?
                .into_iter()
                .map(|(a, b)| [a, b])
                .collect(),
        })
    }

    /// Crafts, scores and reports with the configured defense and condition.
    pub fn run(&self) -> Result<EvalReport> {
        let defense = self.cfg.defense.build()?;
        let crafted = self
            .cfg
            .attacks
            .iter()
            .map(|spec| self.craft(spec, &defense))
            .collect::<Result<Vec<_>>>()?;
        let (scores, source_scores) = self.score(&defense, &crafted)?;
        self.report(
            &defense,
            &scores,
            &source_scores,
            &crafted,
            &self.cfg.condition,
        )
    }
}

/// Builds the protocol described by `cfg` and runs it.
pub fn run_protocol(cfg: &ProtocolConfig) -> Result<EvalReport> {
    Protocol::new(cfg.clone())?.run()
}
