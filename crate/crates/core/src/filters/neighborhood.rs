//! Classic center-pixel neighborhood filters with clamped borders.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

use super::window::window_bounds;

fn check_size(s: usize) -> Result<()> {
    if s < 2 {
        return Err(Error::InvalidConfig(format!(
            "window size must be >= 2, got {s}"
        )));
    }
    Ok(())
}

fn per_plane(img: &ImageTensor, f: impl Fn(&[f32], &mut [f32]) + Sync) -> Result<ImageTensor> {
    let n = img.height() * img.width();
    let mut data = vec![0.0f32; img.len()];
    data.par_chunks_mut(n)
        .enumerate()
        .for_each(|(c, out)| f(img.plane(c), out));
    ImageTensor::new(img.channels(), img.height(), img.width(), data)
}

/// Replaces every pixel by the mean of the `s x s` neighborhood around it.
/// Windows are clipped at the border and averaged over the pixels they keep.
pub fn mean_filter(img: &ImageTensor, s: usize) -> Result<ImageTensor> {
    check_size(s)?;
    let (h, w) = (img.height(), img.width());
    per_plane(img, |src, out| {
        for y in 0..h {
            let rows = window_bounds(y, s, h);
            for x in 0..w {
                let cols = window_bounds(x, s, w);
                let mut sum = 0.0f64;
                for row in src[rows.0 * w..rows.1 * w].chunks_exact(w) {
                    for &v in &row[cols.0..cols.1] {
                        sum += v as f64;
                    }
                }
                let count = (rows.1 - rows.0) * (cols.1 - cols.0);
                out[y * w + x] = (sum / count as f64) as f32;
            }
        }
    })
}

/// Replaces every pixel by the lower median of its clipped neighborhood.
pub fn median_filter(img: &ImageTensor, s: usize) -> Result<ImageTensor> {
    check_size(s)?;
    let (h, w) = (img.height(), img.width());
    per_plane(img, |src, out| {
        let mut scratch = Vec::with_capacity(s * s);
        for y in 0..h {
            let rows = window_bounds(y, s, h);
            for x in 0..w {
                let cols = window_bounds(x, s, w);
                scratch.clear();
                for row in src[rows.0 * w..rows.1 * w].chunks_exact(w) {
                    scratch.extend_from_slice(&row[cols.0..cols.1]);
                }
                let k = (scratch.len() - 1) / 2;
                out[y * w + x] = *scratch.select_nth_unstable_by(k, f32::total_cmp).1;
            }
        }
    })
}
