//! L-infinity gradient attacks on the toy verifier.
//!
//! All attacks here are impersonation attacks: they push the source image's
//! embedding toward a target embedding, so every step moves *against* the
//! gradient of `J = ||f(x) - f(target)||`. Each iterate is projected onto
//! `[source - eps, source + eps] ∩ [0, 1]`.

mod config;

use crate::diffusion::Defense;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, RngStream};
use crate::tensor::ImageTensor;
use crate::verifier::{Embedding, ToyExtractor};

pub use config::{AttackConfig, AttackKind};

/// Number of trailing loss changes averaged by the SGADV plateau test.
pub const PLATEAU_WINDOW: usize = 5;

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: ImageTensor,
    pub iterations_used: usize,
    pub final_loss: f64,
    pub converged: bool,
    /// The loss gradient vanished (zero loss or all-zero gradient).
    pub degenerate: bool,
}

/// Loss, gradient and degeneracy at one iterate.
type StepEval = (f64, ImageTensor, bool);

/// `Clip_{source, eps}`: elementwise projection onto the eps-ball and the unit box.
pub fn project(x: &mut ImageTensor, source: &ImageTensor, eps: f64) {
    let e = eps as f32;
    for (v, &s) in x.data_mut().iter_mut().zip(source.data()) {
        let lo = (s - e).max(0.0);
        let hi = (s + e).min(1.0);
        *v = v.clamp(lo, hi);
    }
}

fn sign(g: f32) -> f32 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute loss change over the last [`PLATEAU_WINDOW`] iterations
/// fell below `tau`.
pub fn plateaued(losses: &[f64], tau: f64) -> bool {
    if losses.len() <= PLATEAU_WINDOW {
        return false;
    }
    let tail = &losses[losses.len() - PLATEAU_WINDOW - 1..];
    let mean = tail.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / PLATEAU_WINDOW as f64;
    mean < tau
}

fn initial_point(source: &ImageTensor, cfg: &AttackConfig) -> ImageTensor {
    let mut x = source.clone();
    if cfg.random_start {
        let mut rng = RngStream::new(derive_seed(cfg.seed, 0));
        let e = cfg.epsilon;
        for v in x.data_mut() {
            *v += rng.uniform(-e, e) as f32;
        }
        project(&mut x, source, cfg.epsilon);
    }
    x
}

fn iterate(
    source: &ImageTensor,
    cfg: &AttackConfig,
    stop_on_plateau: bool,
    mut eval: impl FnMut(&ImageTensor) -> Result<StepEval>,
) -> Result<AttackResult> {
    cfg.validate()?;
    let mut x = initial_point(source, cfg);
    let mut losses = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut degenerate = false;
    let alpha = cfg.alpha as f32;
    loop {
        let (loss, grad, degen) = eval(&x)?;
        losses.push(loss);
        if degen || grad.data().iter().all(|&g| g == 0.0) {
            degenerate = true;
            converged = loss < 1e-12;
            break;
        }
        if stop_on_plateau && plateaued(&losses, cfg.tau_conv) {
            converged = true;
            break;
        }
        if iterations == cfg.t_max {
            break;
        }
        for (v, &g) in x.data_mut().iter_mut().zip(grad.data()) {
            *v -= alpha * sign(g);
        }
        project(&mut x, source, cfg.epsilon);
        iterations += 1;
    }
    Ok(AttackResult {
        adversarial: x,
        iterations_used: iterations,
        final_loss: *losses.last().expect("at least one evaluation"),
        converged,
        degenerate,
    })
}

fn white_box<'a>(
    model: &'a ToyExtractor,
    target: &'a Embedding,
) -> impl FnMut(&ImageTensor) -> Result<StepEval> + 'a {
    let target = target.clone();
    move |x| {
        let lg = model.loss_grad(x, &target)?;
        Ok((lg.loss, lg.grad, lg.degenerate))
    }
}

/// Single sign step of size eps from the source.
pub fn fgsm(
    model: &ToyExtractor,
    source: &ImageTensor,
    target: &Embedding,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let single = AttackConfig {
        alpha: cfg.epsilon,
        t_max: 1,
        random_start: false,
        ..cfg.clone()
    };
    iterate(source, &single, false, white_box(model, target))
}

/// Projected sign-gradient descent from a uniform random start.
pub fn pgd(
    model: &ToyExtractor,
    source: &ImageTensor,
    target: &Embedding,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    iterate(source, cfg, false, white_box(model, target))
}

/// PGD started from the source itself.
pub fn bim(
    model: &ToyExtractor,
    source: &ImageTensor,
    target: &Embedding,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let zero_start = AttackConfig {
        random_start: false,
        ..cfg.clone()
    };
    iterate(source, &zero_start, false, white_box(model, target))
}

/// Similarity-guided attack: sign descent on the feature distance to the
/// target image, stopped on a loss plateau or after `t_max` steps.
pub fn sgadv(
    model: &ToyExtractor,
    source: &ImageTensor,
    target_img: &ImageTensor,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let target = model.extract(target_img)?;
    iterate(source, cfg, true, white_box(model, &target))
}

/// Averages `k` straight-through gradients, each taken at an independent
/// purification of `x`. Returns the mean loss too.
fn bpda_eval(
    model: &ToyExtractor,
    x: &ImageTensor,
    target: &Embedding,
    defense: &Defense,
    k: usize,
    rng: &mut RngStream,
) -> Result<StepEval> {
    let mut acc = vec![0.0f64; x.len()];
    let mut loss = 0.0;
    let mut all_degenerate = true;
    for _ in 0..k {
        let purified = defense.apply(x, rng)?;
        let lg = model.loss_grad(&purified, target)?;
        loss += lg.loss;
        all_degenerate &= lg.degenerate;
        for (a, &g) in acc.iter_mut().zip(lg.grad.data()) {
            *a += g as f64;
        }
    }
    let inv = 1.0 / k as f64;
    let (c, h, w) = x.shape();
    let grad = ImageTensor::new(c, h, w, acc.into_iter().map(|v| (v * inv) as f32).collect())?;
    Ok((loss * inv, grad, all_degenerate))
}

/// Expectation-over-transformation gradient: the mean of `k` BPDA gradients
/// through independently seeded runs of `defense`.
pub fn eot_gradient(
    model: &ToyExtractor,
    x: &ImageTensor,
    target: &Embedding,
    defense: &Defense,
    k: usize,
    seed: u64,
) -> Result<ImageTensor> {
    if k == 0 {
        return Err(Error::InvalidConfig("EOT needs at least one sample".into()));
    }
    let mut rng = RngStream::new(seed);
    bpda_eval(model, x, target, defense, k, &mut rng).map(|(_, g, _)| g)
}

/// SGADV against a purification defense.
///
/// Every iteration purifies the current iterate, measures the feature
/// distance of the purified image, takes the gradient with respect to the
/// purified image and applies it to the unpurified iterate (straight-through
/// approximation of the defense). With `eot_samples > 1` the gradient is
/// averaged over that many purifications.
pub fn adaptive_sgadv(
    model: &ToyExtractor,
    source: &ImageTensor,
    target_img: &ImageTensor,
    cfg: &AttackConfig,
    defense: &Defense,
) -> Result<AttackResult> {
    let target = model.extract(target_img)?;
    let mut rng = RngStream::new(derive_seed(cfg.seed, 1));
    let k = cfg.eot_samples;
    iterate(source, cfg, true, |x| {
        bpda_eval(model, x, &target, defense, k, &mut rng)
    })
}

/// Runs `kind` with `cfg`. `defense` is only consulted by the adaptive attack.
pub fn run_attack(
    kind: AttackKind,
    model: &ToyExtractor,
    source: &ImageTensor,
    target_img: &ImageTensor,
    cfg: &AttackConfig,
    defense: &Defense,
) -> Result<AttackResult> {
    match kind {
        AttackKind::Sgadv => sgadv(model, source, target_img, cfg),
        AttackKind::AdaptiveSgadv => adaptive_sgadv(model, source, target_img, cfg, defense),
        _ => {
            let target = model.extract(target_img)?;
            match kind {
                AttackKind::Fgsm => fgsm(model, source, &target, cfg),
                AttackKind::Pgd => pgd(model, source, &target, cfg),
                AttackKind::Bim => bim(model, source, &target, cfg),
                AttackKind::Sgadv | AttackKind::AdaptiveSgadv => unreachable!(),
            }
        }
    }
}
