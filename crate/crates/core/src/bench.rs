//! Timing harness for the purification pipelines.

use std::time::Instant;

use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::{corrupt, noiseless_restore, purify, run_chain, Denoiser, DiffusionConfig};
use crate::error::{Error, Result};
use crate::filters::{apply_filter, FilterConfig, Strategy};
use crate::rng::{derive_seed, RngStream};
use crate::tensor::{clamp01, ImageTensor};

pub const BENCH_SIZE: usize = 112;
pub const BENCH_BATCH: usize = 500;
pub const BENCH_LAMBDA: f64 = 0.25;
pub const BENCH_SIGMA: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Gaussian,
    Iwmf,
    NoiselessDiffusion,
    IwmfDiffusion,
    GaussianDiffusion,
    IwmfGaussianDiffusion,
}

impl Pipeline {
    pub const ALL: [Pipeline; 6] = [
        Pipeline::Gaussian,
        Pipeline::Iwmf,
        Pipeline::NoiselessDiffusion,
        Pipeline::IwmfDiffusion,
        Pipeline::GaussianDiffusion,
        Pipeline::IwmfGaussianDiffusion,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Pipeline::Gaussian => "Gaussian",
            Pipeline::Iwmf => "IWMF",
            Pipeline::NoiselessDiffusion => "Diffusion (noiseless)",
            Pipeline::IwmfDiffusion => "IWMF + Diffusion",
            Pipeline::GaussianDiffusion => "Gaussian + Diffusion",
            Pipeline::IwmfGaussianDiffusion => "IWMF + Gaussian + Diffusion",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Gaussian => "gaussian",
            Pipeline::Iwmf => "iwmf",
            Pipeline::NoiselessDiffusion => "noiseless-diffusion",
            Pipeline::IwmfDiffusion => "iwmf-diffusion",
            Pipeline::GaussianDiffusion => "gaussian-diffusion",
            Pipeline::IwmfGaussianDiffusion => "iwmf-gaussian-diffusion",
        }
    }

    pub fn uses_diffusion(self) -> bool {
        !matches!(self, Pipeline::Gaussian | Pipeline::Iwmf)
    }

    /// Runs the pipeline once on `img`.
    pub fn run(self, img: &ImageTensor, seed: u64, denoiser: &dyn Denoiser) -> Result<ImageTensor> {
        let iwmf = FilterConfig::iwmf(BENCH_LAMBDA, derive_seed(seed, 0));
        let gaussian = FilterConfig {
            noise_param: BENCH_SIGMA,
            ..FilterConfig::iwmf(0.0, derive_seed(seed, 0)).with_strategy(Strategy::GaussianNoise)
        };
        let diff = DiffusionConfig::with_sigma_y(BENCH_SIGMA, derive_seed(seed, 1));
        match self {
            Pipeline::Gaussian => apply_filter(img, &gaussian),
            Pipeline::Iwmf => apply_filter(img, &iwmf),
            Pipeline::NoiselessDiffusion => noiseless_restore(img, &diff, Some(denoiser)),
            Pipeline::IwmfDiffusion => {
                let blurred = apply_filter(img, &iwmf)?;
                noiseless_restore(&blurred, &diff, Some(denoiser))
            }
            Pipeline::GaussianDiffusion => {
                let y = corrupt(img, BENCH_SIGMA, derive_seed(seed, 2))?;
                let mut rng = RngStream::new(derive_seed(seed, 3));
                let (x0, _) = run_chain(&y, &diff, Some(denoiser), &mut rng)?;
                clamp01(&x0)
            }
            Pipeline::IwmfGaussianDiffusion => {
                purify(img, Some(&iwmf), Some(&diff), Some(denoiser))
            }
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "pipeline",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub pipeline: Pipeline,
    /// Seconds per single image, one entry per repetition.
    pub single: Vec<f64>,
    /// Seconds per batch, one entry per repetition.
    pub batch: Vec<f64>,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

impl Timing {
    pub fn single_stats(&self) -> (f64, f64) {
        mean_var(&self.single)
    }

    pub fn batch_stats(&self) -> (f64, f64) {
        mean_var(&self.batch)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    pub size: usize,
    pub batch: usize,
    pub repeats: usize,
    /// Worker threads for the batch; 0 uses the rayon default.
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            size: BENCH_SIZE,
            batch: BENCH_BATCH,
            repeats: 3,
            threads: 0,
            seed: 0,
        }
    }
}

fn bench_images(cfg: &BenchConfig) -> Result<Vec<ImageTensor>> {
    // A handful of distinct images, cycled through the batch.
    (0..cfg.batch.clamp(1, 8) as u64)
        .map(|i| {
            let mut rng = RngStream::new(derive_seed(cfg.seed, i));
            let n = 3 * cfg.size * cfg.size;
            let data = (0..n).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
            ImageTensor::new(3, cfg.size, cfg.size, data)
        })
        .collect()
}

fn time_batch(
    pipeline: Pipeline,
    images: &[ImageTensor],
    batch: usize,
    seed: u64,
    denoiser: &dyn Denoiser,
    parallel: bool,
) -> Result<f64> {
    let start = Instant::now();
    let job = |i: usize| {
        pipeline
            .run(
                &images[i % images.len()],
                derive_seed(seed, i as u64),
                denoiser,
            )
            .map(drop)
    };
    if parallel {
        (0..batch).into_par_iter().try_for_each(job)?;
    } else {
        (0..batch).try_for_each(job)?;
    }
    Ok(start.elapsed().as_secs_f64())
}

/// Times every pipeline on single images and on a batch.
pub fn run_bench(
    cfg: &BenchConfig,
    pipelines: &[Pipeline],
    denoiser: &dyn Denoiser,
) -> Result<Vec<Timing>> {
    if cfg.repeats == 0 || cfg.batch == 0 || cfg.size < 3 {
        return Err(Error::InvalidConfig(
            "bench needs repeats, batch > 0 and size >= 3".into(),
        ));
    }
    let images = bench_images(cfg)?;
    let parallel = denoiser.thread_safe();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut out = Vec::new();
    for &p in pipelines {
        // warm-up
        p.run(&images[0], cfg.seed, denoiser)?;
        let mut single = Vec::new();
        let mut batch = Vec::new();
        for r in 0..cfg.repeats {
            let seed = derive_seed(cfg.seed, 1000 + r as u64);
            let start = Instant::now();
            p.run(&images[r % images.len()], seed, denoiser)?;
            single.push(start.elapsed().as_secs_f64());
            batch.push(
                pool.install(|| time_batch(p, &images, cfg.batch, seed, denoiser, parallel))?,
            );
        }
        log::info!("bench {}: done", p.label());
        out.push(Timing {
            pipeline: p,
            single,
            batch,
        });
    }
    Ok(out)
}

/// Text table of the timings, seconds as mean ± standard deviation.
pub fn format_table(timings: &[Timing], batch: usize) -> String {
    let mut s = format!(
        "{:<30}{:>24}{:>24}\n",
        "pipeline",
        "single (s)",
        format!("batch {batch} (s)")
    );
    for t in timings {
        let (sm, sv) = t.single_stats();
        let (bm, bv) = t.batch_stats();
        s.push_str(&format!(
            "{:<30}{:>24}{:>24}\n",
            t.pipeline.label(),
            format!("{sm:.5} ± {:.5}", sv.sqrt()),
            format!("{bm:.3} ± {:.3}", bv.sqrt()),
        ));
    }
    s
}
