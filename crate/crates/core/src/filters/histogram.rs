use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Equal-width histogram of per-element differences over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let b = ((v - self.lo) / self.bin_width()).floor();
        (b.max(0.0) as usize).min(self.bins() - 1)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of mass in bins lying entirely inside `(-r, r)`.
    pub fn mass_within(&self, r: f64) -> f64 {
        let w = self.bin_width();
        let inside: u64 = self
            .counts
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let a = self.lo + *i as f64 * w;
                a >= -r && a + w <= r
            })
            .map(|(_, c)| c)
            .sum();
        inside as f64 / self.total().max(1) as f64
    }
}

/// Histogram of `a - b` with `bins` equal bins over `[-1, 1]`.
pub fn diff_histogram(a: &ImageTensor, b: &ImageTensor, bins: usize) -> Result<Histogram> {
    a.ensure_same_shape(b)?;
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "histogram needs at least one bin".into(),
        ));
    }
    let mut h = Histogram {
        lo: -1.0,
        hi: 1.0,
        counts: vec![0; bins],
    };
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let i = h.bin_of(x as f64 - y as f64);
        h.counts[i] += 1;
    }
    Ok(h)
}
