use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::ImageTensor;

use super::{iters_for, FilterConfig};

/// Half-open index range `[center - floor(s/2), center + ceil(s/2))`
/// clamped to `0..len`. Even sizes keep the asymmetric split.
#[inline]
pub fn window_bounds(center: usize, s: usize, len: usize) -> (usize, usize) {
    let lo = center.saturating_sub(s / 2);
    let hi = (center + s - s / 2).min(len);
    (lo, hi)
}

/// Window centers per channel, in the order they are applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub centers: Vec<Vec<(usize, usize)>>,
}

impl WindowPlan {
    /// The same centers on every channel.
    pub fn shared(channels: usize, centers: Vec<(usize, usize)>) -> Self {
        Self {
            centers: vec![centers; channels],
        }
    }
}

/// Draws `iters_for(lambda, H, W)` uniformly random centers per channel.
/// Draw order is channel, then window, then row, then column.
pub fn plan_windows(shape: (usize, usize, usize), lambda: f64, seed: u64) -> WindowPlan {
    let (ch, h, w) = shape;
    let iters = iters_for(lambda, h, w);
    let mut rng = RngStream::new(seed);
    let centers = (0..ch)
        .map(|_| {
            (0..iters)
                .map(|_| {
                    let m = rng.index_below(h);
                    let n = rng.index_below(w);
                    (m, n)
                })
                .collect()
        })
        .collect();
    WindowPlan { centers }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowOp {
    /// Mean of the working image (each window sees earlier replacements).
    IterativeMean,
    /// Mean of the original input.
    NonIterativeMean,
    /// Lower median of the working image.
    IterativeMedian,
}

fn check_window(img: &ImageTensor, s: usize) -> Result<()> {
    if s > img.height() || s > img.width() {
        return Err(Error::WindowTooLarge {
            size: s,
            height: img.height(),
            width: img.width(),
        });
    }
    Ok(())
}

#[inline]
fn region_mean(plane: &[f32], w: usize, rows: (usize, usize), cols: (usize, usize)) -> f32 {
    let mut sum = 0.0f64;
    for row in plane[rows.0 * w..rows.1 * w].chunks_exact(w) {
        for &v in &row[cols.0..cols.1] {
            sum += v as f64;
        }
    }
    let count = (rows.1 - rows.0) * (cols.1 - cols.0);
    (sum / count as f64) as f32
}

#[inline]
fn region_median(
    plane: &[f32],
    w: usize,
    rows: (usize, usize),
    cols: (usize, usize),
    scratch: &mut Vec<f32>,
) -> f32 {
    scratch.clear();
    for row in plane[rows.0 * w..rows.1 * w].chunks_exact(w) {
        scratch.extend_from_slice(&row[cols.0..cols.1]);
    }
    let k = (scratch.len() - 1) / 2;
    let (_, m, _) = scratch.select_nth_unstable_by(k, f32::total_cmp);
    *m
}

#[inline]
fn fill_region(plane: &mut [f32], w: usize, rows: (usize, usize), cols: (usize, usize), v: f32) {
    for row in plane[rows.0 * w..rows.1 * w].chunks_exact_mut(w) {
        row[cols.0..cols.1].fill(v);
    }
}

/// Applies the windows of `plan` with window size `s`.
pub fn apply_windows(
    img: &ImageTensor,
    plan: &WindowPlan,
    s: usize,
    op: WindowOp,
) -> Result<ImageTensor> {
    check_window(img, s)?;
    if plan.centers.len() != img.channels() {
        return Err(Error::InvalidConfig(format!(
            "window plan covers {} channels, image has {}",
            plan.centers.len(),
            img.channels()
        )));
    }
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    let mut scratch = Vec::with_capacity(s * s);
    for (c, centers) in plan.centers.iter().enumerate() {
        let source = img.plane(c);
        let plane = out.plane_mut(c);
        for &(m, n) in centers {
            if m >= h || n >= w {
                return Err(Error::InvalidConfig(format!(
                    "window center ({m}, {n}) outside {h}x{w} image"
                )));
            }
            let rows = window_bounds(m, s, h);
            let cols = window_bounds(n, s, w);
            let v = match op {
                WindowOp::IterativeMean => region_mean(plane, w, rows, cols),
                WindowOp::NonIterativeMean => region_mean(source, w, rows, cols),
                WindowOp::IterativeMedian => region_median(plane, w, rows, cols, &mut scratch),
            };
            fill_region(plane, w, rows, cols, v);
        }
    }
    Ok(out)
}

fn run(img: &ImageTensor, cfg: &FilterConfig, op: WindowOp) -> Result<ImageTensor> {
    cfg.validate()?;
    check_window(img, cfg.window_size)?;
    let plan = plan_windows(img.shape(), cfg.lambda, cfg.seed);
    apply_windows(img, &plan, cfg.window_size, op)
}

/// Iterative window mean filter.
pub fn iwmf(img: &ImageTensor, cfg: &FilterConfig) -> Result<ImageTensor> {
    run(img, cfg, WindowOp::IterativeMean)
}

/// Window mean filter whose means always come from the unmodified input.
pub fn window_mean_noniter(img: &ImageTensor, cfg: &FilterConfig) -> Result<ImageTensor> {
    run(img, cfg, WindowOp::NonIterativeMean)
}

/// Iterative window filter with the median in place of the mean.
pub fn window_median_iter(img: &ImageTensor, cfg: &FilterConfig) -> Result<ImageTensor> {
    run(img, cfg, WindowOp::IterativeMedian)
}
