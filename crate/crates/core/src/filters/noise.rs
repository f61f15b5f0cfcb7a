use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::ImageTensor;

/// Adds i.i.d. `N(0, sigma^2)` noise to every sample and clamps to `[0, 1]`.
pub fn gaussian_noise(img: &ImageTensor, sigma: f64, seed: u64) -> Result<ImageTensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    let mut out = img.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = RngStream::new(seed);
    let s = sigma as f32;
    for v in out.data_mut() {
        *v = (*v + s * rng.normal_f32()).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Sets exactly `round(fraction * len)` distinct, uniformly chosen samples to 0.
pub fn pepper_noise(img: &ImageTensor, fraction: f64, seed: u64) -> Result<ImageTensor> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "pepper fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let mut out = img.clone();
    let k = (fraction * img.len() as f64).round() as usize;
    let mut rng = RngStream::new(seed);
    let data = out.data_mut();
    for i in rng.sample_indices(data.len(), k) {
        data[i] = 0.0;
    }
    Ok(out)
}
