//! Reference implementations written independently of the library code:
//! plain nested loops, no shared helpers.
#![allow(dead_code)]

use iwmf_core::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead_beef);
    let data = (0..c * h * w).map(|_| rng.random::<f32>()).collect();
    ImageTensor::new(c, h, w, data).unwrap()
}

/// Window row/col range for center `m`, clamped to the image.
fn span(m: usize, s: usize, len: usize) -> (usize, usize) {
    let lo = m as isize - (s / 2) as isize;
    let hi = m as isize + (s as f64 / 2.0).ceil() as isize;
    (lo.max(0) as usize, hi.min(len as isize) as usize)
}

/// Centers in the documented draw order: channel, window, row, column.
pub fn oracle_centers(
    seed: u64,
    c: usize,
    h: usize,
    w: usize,
    lambda: f64,
) -> Vec<Vec<(usize, usize)>> {
    let iters = (lambda * (h * w) as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..c {
        let mut v = Vec::new();
        for _ in 0..iters {
            let m = rng.random_range(0..h as u32) as usize;
            let n = rng.random_range(0..w as u32) as usize;
            v.push((m, n));
        }
        out.push(v);
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
pub enum Mode {
    Iterative,
    NonIterative,
    Median,
}

fn lower_median(mut v: Vec<f32>) -> f32 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[(v.len() - 1) / 2]
}

pub fn oracle_windows(
    img: &ImageTensor,
    seed: u64,
    lambda: f64,
    s: usize,
    mode: Mode,
) -> ImageTensor {
    let (c, h, w) = img.shape();
    let centers = oracle_centers(seed, c, h, w, lambda);
    let mut y = img.clone();
    for (ch, chan) in centers.iter().enumerate() {
        for &(m, n) in chan {
            let (r0, r1) = span(m, s, h);
            let (c0, c1) = span(n, s, w);
            let mut vals = Vec::new();
            for i in r0..r1 {
                for j in c0..c1 {
                    let v = if mode == Mode::NonIterative {
                        img.get(ch, i, j)
                    } else {
                        y.get(ch, i, j)
                    };
                    vals.push(v);
                }
            }
            let rep = match mode {
                Mode::Median => lower_median(vals),
                _ => {
                    let mut sum = 0.0f64;
                    for v in &vals {
                        sum += *v as f64;
                    }
                    (sum / vals.len() as f64) as f32
                }
            };
            for i in r0..r1 {
                for j in c0..c1 {
                    y.set(ch, i, j, rep);
                }
            }
        }
    }
    y
}

pub fn oracle_neighborhood(img: &ImageTensor, s: usize, median: bool) -> ImageTensor {
    let (c, h, w) = img.shape();
    let mut out = img.clone();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (r0, r1) = span(y, s, h);
                let (c0, c1) = span(x, s, w);
                let mut vals = Vec::new();
                for i in r0..r1 {
                    for j in c0..c1 {
                        vals.push(img.get(ch, i, j));
                    }
                }
                let v = if median {
                    lower_median(vals)
                } else {
                    let mut sum = 0.0f64;
                    for v in &vals {
                        sum += *v as f64;
                    }
                    (sum / vals.len() as f64) as f32
                };
                out.set(ch, y, x, v);
            }
        }
    }
    out
}

/// Exhaustive sweep over every distinct score and one value above all of
/// them; first threshold with minimal |FAR - FRR|.
pub fn oracle_eer(genuine: &[f64], other: &[f64]) -> (f64, f64, f64) {
    let mut ts: Vec<f64> = genuine.iter().chain(other).copied().collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    ts.push(f64::INFINITY);
    let mut best: Option<(f64, f64, f64)> = None;
    for t in ts {
        let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
        let far = other.iter().filter(|&&s| s >= t).count() as f64 / other.len() as f64;
        let better = match best {
            None => true,
            Some((f, r, _)) => (far - frr).abs() < (f - r).abs(),
        };
        if better {
            best = Some((far, frr, 0.5 * (far + frr)));
        }
    }
    best.unwrap()
}

/// Mann-Whitney: P(g > i) + P(g = i) / 2 by pairwise counting.
pub fn oracle_auc(genuine: &[f64], imposter: &[f64]) -> f64 {
    let mut twice: u64 = 0;
    for &g in genuine {
        for &i in imposter {
            if g > i {
                twice += 2;
            } else if g == i {
                twice += 1;
            }
        }
    }
    twice as f64 / (2.0 * genuine.len() as f64 * imposter.len() as f64)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = xp[i];
            xp[i] = v + h;
            let up = f(&xp);
            xp[i] = v - h;
            let down = f(&xp);
            xp[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}
