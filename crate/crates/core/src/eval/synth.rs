//! Seeded synthetic identities.
//!
//! A subject is a smooth image: a background color plus a handful of
//! Gaussian blobs with per-channel amplitudes. Captures of the same subject
//! move the blobs slightly, rescale their amplitudes and add faint pixel
//! noise; different subjects have unrelated blob layouts.

use crate::error::Result;
use crate::rng::{derive_seed, RngStream};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone)]
struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    amp: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Subject {
    shape: (usize, usize, usize),
    background: Vec<f64>,
    blobs: Vec<Blob>,
    seed: u64,
    jitter: f64,
    noise: f64,
}

impl Subject {
    fn render(&self, blobs: &[Blob], noise: Option<(f64, &mut RngStream)>) -> Result<ImageTensor> {
        let (ch, h, w) = self.shape;
        let mut img = ImageTensor::from_fn(ch, h, w, |c, y, x| {
            let mut v = self.background[c];
            for b in blobs {
                let d2 = (y as f64 - b.cy).powi(2) + (x as f64 - b.cx).powi(2);
                v += b.amp[c] * (-d2 / (2.0 * b.radius * b.radius)).exp();
            }
            v as f32
        })?;
        if let Some((sigma, rng)) = noise {
            for v in img.data_mut() {
                *v += (sigma * rng.normal()) as f32;
            }
        }
        img.clamp01_in_place();
        Ok(img)
    }

    /// The enrollment image.
    pub fn enrollment(&self) -> Result<ImageTensor> {
        self.render(&self.blobs, None)
    }

    /// The `k`-th probe capture.
    pub fn capture(&self, k: u64) -> Result<ImageTensor> {
        let mut rng = RngStream::new(derive_seed(self.seed, k + 1));
        let j = self.jitter;
        let blobs: Vec<Blob> = self
            .blobs
            .iter()
            .map(|b| {
                let scale = 1.0 + rng.uniform(-0.1, 0.1) * j;
                Blob {
                    cy: b.cy + rng.uniform(-1.0, 1.0) * j,
                    cx: b.cx + rng.uniform(-1.0, 1.0) * j,
                    radius: b.radius,
                    amp: b.amp.iter().map(|a| a * scale).collect(),
                }
            })
            .collect();
        self.render(&blobs, Some((self.noise * j, &mut rng)))
    }
}

pub const DEFAULT_AMPLITUDE: f64 = 0.1;
/// Pixel noise of a capture relative to the blob amplitude.
const NOISE_RATIO: f64 = 0.05;

#[derive(Debug, Clone, Copy)]
pub struct IdentityGenerator {
    pub shape: (usize, usize, usize),
    pub seed: u64,
    pub blobs: usize,
    /// Largest per-channel blob amplitude.
    pub amplitude: f64,
    /// Capture variability; 0 makes every capture equal the enrollment.
    pub jitter: f64,
}

impl IdentityGenerator {
    pub fn new(shape: (usize, usize, usize), seed: u64) -> Self {
        Self {
            shape,
            seed,
            blobs: 6,
            amplitude: DEFAULT_AMPLITUDE,
            jitter: 1.0,
        }
    }

    pub fn subject(&self, id: u64) -> Subject {
        let seed = derive_seed(self.seed, id);
        let mut rng = RngStream::new(seed);
        let (ch, h, w) = self.shape;
        let background = (0..ch).map(|_| rng.uniform(0.3, 0.7)).collect();
        let size = h.min(w) as f64;
        let blobs = (0..self.blobs)
            .map(|_| Blob {
                cy: rng.uniform(0.0, h as f64),
                cx: rng.uniform(0.0, w as f64),
                radius: rng.uniform(0.1, 0.25) * size,
                amp: (0..ch)
                    .map(|_| rng.uniform(-self.amplitude, self.amplitude))
                    .collect(),
            })
            .collect();
        Subject {
            shape: self.shape,
            background,
            blobs,
            seed,
            jitter: self.jitter,
            noise: self.amplitude * NOISE_RATIO,
        }
    }
}
