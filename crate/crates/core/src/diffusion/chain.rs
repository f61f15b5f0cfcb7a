use crate::error::{Error, Result};
use crate::rng::{derive_seed, RngStream};
use crate::tensor::ImageTensor;

use super::denoiser::Denoiser;
use super::schedule::DiffusionConfig;

/// Record of one reverse chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    /// Schedule index the chain was anchored to.
    pub t_start: usize,
    /// Noise level of the initial state (always `sigma_y`).
    pub sigma_start: f64,
    /// Levels of the executed steps, in order.
    pub sigmas: Vec<f64>,
}

/// `y = x + N(0, sigma_y^2)` elementwise, without clamping.
pub fn corrupt(x: &ImageTensor, sigma_y: f64, seed: u64) -> Result<ImageTensor> {
    if !(sigma_y >= 0.0 && sigma_y.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sigma_y must be >= 0, got {sigma_y}"
        )));
    }
    let mut y = x.clone();
    if sigma_y == 0.0 {
        return Ok(y);
    }
    let mut rng = RngStream::new(seed);
    let s = sigma_y as f32;
    for v in y.data_mut() {
        *v += s * rng.normal_f32();
    }
    Ok(y)
}

/// Anchors the chain at the schedule entry nearest to `sigma_y` and returns
/// the initial state `x_T = y` with that index.
pub fn chain_start(y: &ImageTensor, cfg: &DiffusionConfig) -> Result<(ImageTensor, usize)> {
    let sched = &cfg.schedule;
    if cfg.sigma_y.is_nan() || cfg.sigma_y <= 0.0 {
        return Err(Error::Diffusion(
            "the reverse chain needs sigma_y > 0".into(),
        ));
    }
    if cfg.sigma_y < sched.min() || cfg.sigma_y > sched.max() {
        return Err(Error::Diffusion(format!(
            "sigma_y {} outside schedule range [{}, {}]",
            cfg.sigma_y,
            sched.min(),
            sched.max()
        )));
    }
    let t = sched.nearest(cfg.sigma_y);
    let entry = sched.as_slice()[t];
    if entry != cfg.sigma_y {
        log::debug!(
            "sigma_y {} not on schedule, anchoring at index {t} (sigma {entry})",
            cfg.sigma_y
        );
    }
    Ok((y.clone(), t))
}

/// One reverse step at level `sigma_t < sigma_y`.
///
/// `sigma_next` is the noise level of `x_next`; it is what the denoiser is
/// asked to remove. Without a denoiser `x_hat = x_next`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step(
    x_next: &ImageTensor,
    y: &ImageTensor,
    sigma_next: f64,
    sigma_t: f64,
    cfg: &DiffusionConfig,
    denoiser: Option<&dyn Denoiser>,
    rng: &mut RngStream,
) -> Result<ImageTensor> {
    if cfg.sigma_y == 0.0 {
        return Err(Error::Diffusion("reverse step with sigma_y = 0".into()));
    }
    if sigma_t >= cfg.sigma_y {
        return Err(Error::Diffusion(format!(
            "reverse step at sigma_t {sigma_t} >= sigma_y {}",
            cfg.sigma_y
        )));
    }
    x_next.ensure_same_shape(y)?;
    let mut out = match denoiser {
        Some(d) => {
            let pred = d.predict(x_next, sigma_next)?;
            x_next.ensure_same_shape(&pred)?;
            pred
        }
        None => x_next.clone(),
    };
    let pull = ((1.0 - cfg.eta * cfg.eta).sqrt() * sigma_t / cfg.sigma_y) as f32;
    let std = (cfg.eta * sigma_t) as f32;
    for (v, &yv) in out.data_mut().iter_mut().zip(y.data()) {
        let mean = *v + pull * (yv - *v);
        *v = mean + std * rng.normal_f32();
    }
    if let Some(index) = out.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(out)
}

/// Runs the reverse chain from `y` down to the smallest schedule level.
/// The result is not clamped.
pub fn run_chain(
    y: &ImageTensor,
    cfg: &DiffusionConfig,
    denoiser: Option<&dyn Denoiser>,
    rng: &mut RngStream,
) -> Result<(ImageTensor, ChainTrace)> {
    let (mut x, t_start) = chain_start(y, cfg)?;
    let sigmas: Vec<f64> = cfg.schedule.as_slice()[t_start + 1..]
        .iter()
        .copied()
        .filter(|&s| s < cfg.sigma_y)
        .collect();
    if let Some(&first) = sigmas.first() {
        if first >= cfg.sigma_y {
            return Err(Error::Diffusion("chain-start invariant violated".into()));
        }
    }
    let mut sigma_next = cfg.sigma_y;
    for &sigma_t in &sigmas {
        x = reverse_step(&x, y, sigma_next, sigma_t, cfg, denoiser, rng)?;
        sigma_next = sigma_t;
    }
    let trace = ChainTrace {
        t_start,
        sigma_start: cfg.sigma_y,
        sigmas,
    };
    Ok((x, trace))
}

/// Corrupts `x` at `sigma_y`, restores it with the reverse chain and clamps.
///
/// `sigma_y = 0` is the degenerate mode: a single `N(x, sigma_0^2)` draw,
/// which neither purifies nor restores anything.
pub fn ddrm_denoise(
    x: &ImageTensor,
    cfg: &DiffusionConfig,
    denoiser: Option<&dyn Denoiser>,
) -> Result<ImageTensor> {
    ddrm_denoise_traced(x, cfg, denoiser).map(|(img, _)| img)
}

pub fn ddrm_denoise_traced(
    x: &ImageTensor,
    cfg: &DiffusionConfig,
    denoiser: Option<&dyn Denoiser>,
) -> Result<(ImageTensor, Option<ChainTrace>)> {
    cfg.validate()?;
    if cfg.sigma_y == 0.0 {
        let out = corrupt(x, cfg.sigma_0(), derive_seed(cfg.seed, 0))?;
        return Ok((out.clamp01()?, None));
    }
    let y = corrupt(x, cfg.sigma_y, derive_seed(cfg.seed, 0))?;
    let mut rng = RngStream::new(derive_seed(cfg.seed, 1));
    let (x0, trace) = run_chain(&y, cfg, denoiser, &mut rng)?;
    Ok((x0.clamp01()?, Some(trace)))
}

/// The reverse chain run on `x` itself, with no corruption noise.
pub fn noiseless_restore(
    x: &ImageTensor,
    cfg: &DiffusionConfig,
    denoiser: Option<&dyn Denoiser>,
) -> Result<ImageTensor> {
    cfg.validate()?;
    let mut rng = RngStream::new(derive_seed(cfg.seed, 1));
    let (x0, _) = run_chain(x, cfg, denoiser, &mut rng)?;
    x0.clamp01()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{IdentityDenoiser, SigmaSchedule};

    fn spaced_schedule() -> SigmaSchedule {
        let mut v: Vec<f64> = (0..300).map(|i| (300 - i) as f64 / 1000.0).collect();
        v.push(0.0001);
        SigmaSchedule::new(v).unwrap()
    }

    #[test]
    fn corrupt_zero_sigma_exact() {
        let x = ImageTensor::filled(3, 4, 4, 0.25).unwrap();
        assert_eq!(corrupt(&x, 0.0, 5).unwrap(), x);
        assert_eq!(corrupt(&x, 0.1, 5).unwrap(), corrupt(&x, 0.1, 5).unwrap());
    }

    #[test]
    fn corrupt_is_unclamped() {
        let x = ImageTensor::filled(1, 50, 50, 0.99).unwrap();
        let y = corrupt(&x, 0.15, 1).unwrap();
        assert!(y.data().iter().any(|&v| v > 1.0));
    }

    #[test]
    fn start_on_schedule_entry() {
        let y = ImageTensor::zeros(1, 2, 2).unwrap();
        let mut cfg = DiffusionConfig::with_sigma_y(0.15, 0);
        cfg.schedule = SigmaSchedule::new(vec![0.3, 0.2, 0.15, 0.1, 0.0001]).unwrap();
        let (x, t) = chain_start(&y, &cfg).unwrap();
        assert_eq!(t, 2);
        assert_eq!(x, y);

        cfg.sigma_y = 0.3;
        assert_eq!(chain_start(&y, &cfg).unwrap().1, 0);
    }

    #[test]
    fn start_snaps_to_nearest() {
        let y = ImageTensor::zeros(1, 2, 2).unwrap();
        let mut cfg = DiffusionConfig::with_sigma_y(0.149, 0);
        cfg.schedule = spaced_schedule();
        let (_, t) = chain_start(&y, &cfg).unwrap();
        assert!((cfg.schedule.as_slice()[t] - 0.149).abs() < 1e-12);
        assert_eq!(t, 151);
    }

    #[test]
    fn start_out_of_range() {
        let y = ImageTensor::zeros(1, 2, 2).unwrap();
        let cfg = DiffusionConfig::with_sigma_y(0.5, 0);
        assert!(chain_start(&y, &cfg).is_err());
        let cfg = DiffusionConfig::with_sigma_y(0.00005, 0);
        assert!(chain_start(&y, &cfg).is_err());
        let cfg = DiffusionConfig::with_sigma_y(0.0, 0);
        assert!(chain_start(&y, &cfg).is_err());
    }

    #[test]
    fn full_length_chain_at_schedule_max() {
        let x = ImageTensor::filled(1, 3, 3, 0.5).unwrap();
        let cfg = DiffusionConfig::with_sigma_y(0.30, 1);
        let (_, trace) = ddrm_denoise_traced(&x, &cfg, None).unwrap();
        let trace = trace.unwrap();
        assert_eq!(trace.t_start, 0);
        assert_eq!(trace.sigmas.len(), 99);
    }

    #[test]
    fn step_mean_matches_closed_form() {
        // mean = sqrt(1 - 0.85^2) * (0.1 / 0.15) for x_hat = 0, y = 1
        let expected = (1.0f64 - 0.85 * 0.85).sqrt() * (0.1 / 0.15);
        assert!((expected - 0.35118).abs() < 1e-5);
        let x = ImageTensor::zeros(1, 200, 200).unwrap();
        let y = ImageTensor::filled(1, 200, 200, 1.0).unwrap();
        let cfg = DiffusionConfig::with_sigma_y(0.15, 0);
        let mut rng = RngStream::new(3);
        let out = reverse_step(&x, &y, 0.15, 0.1, &cfg, None, &mut rng).unwrap();
        // 40000 samples of std 0.085: standard error ~4.3e-4
        assert!((out.mean() - expected).abs() < 2e-3, "{}", out.mean());
    }

    #[test]
    fn eta_one_ignores_observation() {
        let x = ImageTensor::filled(1, 200, 200, 0.2).unwrap();
        let y = ImageTensor::filled(1, 200, 200, 0.9).unwrap();
        let mut cfg = DiffusionConfig::with_sigma_y(0.15, 0);
        cfg.eta = 1.0;
        let mut rng = RngStream::new(4);
        let out = reverse_step(&x, &y, 0.15, 0.1, &cfg, None, &mut rng).unwrap();
        assert!((out.mean() - 0.2).abs() < 2e-3);
        let var = out
            .data()
            .iter()
            .map(|&v| (v as f64 - 0.2).powi(2))
            .sum::<f64>()
            / out.len() as f64;
        assert!((var / 0.01 - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn vanishing_sigma_returns_prediction() {
        let x = ImageTensor::filled(1, 4, 4, 0.3).unwrap();
        let y = ImageTensor::filled(1, 4, 4, 0.8).unwrap();
        let cfg = DiffusionConfig::with_sigma_y(0.15, 0);
        let mut rng = RngStream::new(1);
        let out =
            reverse_step(&x, &y, 0.15, 1e-9, &cfg, Some(&IdentityDenoiser), &mut rng).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() < 1e-6);
    }

    #[test]
    fn step_preconditions() {
        let x = ImageTensor::zeros(1, 2, 2).unwrap();
        let cfg = DiffusionConfig::with_sigma_y(0.15, 0);
        let mut rng = RngStream::new(1);
        assert!(reverse_step(&x, &x, 0.2, 0.15, &cfg, None, &mut rng).is_err());
        let cfg0 = DiffusionConfig::with_sigma_y(0.0, 0);
        assert!(reverse_step(&x, &x, 0.2, 0.1, &cfg0, None, &mut rng).is_err());
    }

    #[test]
    fn degenerate_mode_stays_close() {
        let x = ImageTensor::filled(3, 16, 16, 0.5).unwrap();
        let cfg = DiffusionConfig::with_sigma_y(0.0, 2);
        let out = ddrm_denoise(&x, &cfg, None).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() < (6.0 * 0.0001) as f32);
        assert_ne!(out, x);
    }

    #[test]
    fn replay_is_bit_identical() {
        let x = ImageTensor::from_fn(3, 8, 8, |c, y, x| ((c + y + x) % 5) as f32 / 4.0).unwrap();
        let cfg = DiffusionConfig::with_sigma_y(0.15, 77);
        assert_eq!(
            ddrm_denoise(&x, &cfg, Some(&IdentityDenoiser)).unwrap(),
            ddrm_denoise(&x, &cfg, Some(&IdentityDenoiser)).unwrap()
        );
    }

    #[test]
    fn first_step_is_below_sigma_y() {
        let x = ImageTensor::filled(1, 4, 4, 0.5).unwrap();
        for sigma_y in [0.05, 0.1, 0.15, 0.2, 0.2999] {
            let cfg = DiffusionConfig::with_sigma_y(sigma_y, 0);
            let (_, trace) = ddrm_denoise_traced(&x, &cfg, None).unwrap();
            let trace = trace.unwrap();
            assert_eq!(trace.sigma_start, sigma_y);
            assert!(trace.sigmas[0] < sigma_y);
            assert_eq!(*trace.sigmas.last().unwrap(), 0.0001);
        }
    }
}
