//! A small differentiable feature extractor standing in for a face model.
//!
//! `conv (valid, zero-mean kernels) -> softplus(z + b) - softplus(b) -> grid average
//! pooling -> centering -> linear projection -> L2 normalization`.
//!
//! Weights are drawn from a seed and rounded to `f32`, so a weight dump in
//! the raw-tensor format reloads bit-exactly. All arithmetic is `f64`; the
//! input gradient of `||f(x) - target||` is computed analytically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{decode_raw, encode_raw, RAW_HEADER_LEN};
use crate::rng::RngStream;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernels: usize,
    pub kernel_size: usize,
    /// Pooling grid is `grid x grid` cells over the conv output.
    pub grid: usize,
    pub embedding_dim: usize,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self {
            channels: 3,
            height: 32,
            width: 32,
            kernels: 8,
            kernel_size: 3,
            grid: 4,
            embedding_dim: 32,
        }
    }
}

impl ExtractorSpec {
    pub fn with_size(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ..Self::default()
        }
    }

    fn out_h(&self) -> usize {
        self.height + 1 - self.kernel_size
    }

    fn out_w(&self) -> usize {
        self.width + 1 - self.kernel_size
    }

    fn features(&self) -> usize {
        self.kernels * self.grid * self.grid
    }

    fn validate(&self) -> Result<()> {
        let ok = self.channels > 0
            && self.kernels > 0
            && self.kernel_size > 0
            && self.grid > 0
            && self.embedding_dim > 0
            && self.height >= self.kernel_size
            && self.width >= self.kernel_size
            && self.out_h() >= self.grid
            && self.out_w() >= self.grid;
        if !ok {
            return Err(Error::InvalidConfig(format!("bad extractor spec {self:?}")));
        }
        Ok(())
    }
}

/// Unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values`; fails on a zero vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let n = l2(&values);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidTensor(
                "cannot normalize a zero embedding".into(),
            ));
        }
        Ok(Self(values.into_iter().map(|v| v / n).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn negated(&self) -> Embedding {
        Embedding(self.0.iter().map(|v| -v).collect())
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of two unit embeddings, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> f64 {
    let d: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    d.clamp(-1.0, 1.0)
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Raw first-layer convolution output, `kernels x out_h x out_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvResponse {
    pub kernels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ConvResponse {
    pub fn distance(&self, other: &ConvResponse) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Loss value and input gradient of `||f(x) - target||`.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: ImageTensor,
    /// The loss was zero and the norm has no gradient there.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyExtractor {
    spec: ExtractorSpec,
    conv: Vec<f64>,
    bias: Vec<f64>,
    projection: Vec<f64>,
    offset: Vec<f64>,
    /// `(lo, hi)` conv-output bounds of each pooling cell along one axis.
    cells_y: Vec<(usize, usize)>,
    cells_x: Vec<(usize, usize)>,
}

const KERNEL_GAIN: f64 = 4.0;

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn cells(len: usize, grid: usize) -> Vec<(usize, usize)> {
    (0..grid)
        .map(|g| (g * len / grid, (g + 1) * len / grid))
        .collect()
}

struct Forward {
    /// `z + b` per conv output element.
    pre: Vec<f64>,
    /// Unnormalized embedding.
    e: Vec<f64>,
}

impl ToyExtractor {
    pub fn new(spec: ExtractorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = RngStream::new(seed);
        let fan_in = (spec.channels * spec.kernel_size * spec.kernel_size) as f64;
        let taps = spec.kernel_size * spec.kernel_size;
        let mut conv: Vec<f64> = (0..spec.kernels * spec.channels * taps)
            .map(|_| rng.normal() * KERNEL_GAIN / fan_in.sqrt())
            .collect();
        // zero-mean per kernel and channel: flat regions give no response
        for w in conv.chunks_exact_mut(taps) {
            let mean = w.iter().sum::<f64>() / taps as f64;
            for v in w.iter_mut() {
                *v = round_f32(*v - mean);
            }
        }
        let bias = (0..spec.kernels)
            .map(|_| round_f32(rng.normal() * 0.5))
            .collect();
        let f = spec.features() as f64;
        let projection = (0..spec.embedding_dim * spec.features())
            .map(|_| round_f32(rng.normal() / f.sqrt()))
            .collect();
        Self::from_parts(spec, conv, bias, projection)
    }

    fn from_parts(
        spec: ExtractorSpec,
        conv: Vec<f64>,
        bias: Vec<f64>,
        projection: Vec<f64>,
    ) -> Result<Self> {
        spec.validate()?;
        let mut model = Self {
            spec,
            conv,
            bias,
            projection,
            offset: vec![0.0; spec.features()],
            cells_y: cells(spec.out_h(), spec.grid),
            cells_x: cells(spec.out_w(), spec.grid),
        };
        // features are measured relative to a mid-gray image
        let gray = vec![0.5; spec.channels * spec.height * spec.width];
        let pre = model.conv_pre(&gray);
        model.offset = model.pool(&pre);
        Ok(model)
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.spec.channels, self.spec.height, self.spec.width)
    }

    fn check_shape(&self, img: &ImageTensor) -> Result<()> {
        if img.shape() != self.input_shape() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape(),
                actual: img.shape(),
            });
        }
        Ok(())
    }

    fn to_f64(img: &ImageTensor) -> Vec<f64> {
        img.data().iter().map(|&v| v as f64).collect()
    }

    /// Valid convolution without bias.
    fn conv_raw(&self, x: &[f64]) -> Vec<f64> {
        let s = &self.spec;
        let (oh, ow, k) = (s.out_h(), s.out_w(), s.kernel_size);
        let mut z = vec![0.0; s.kernels * oh * ow];
        for kk in 0..s.kernels {
            let zk = &mut z[kk * oh * ow..(kk + 1) * oh * ow];
            for c in 0..s.channels {
                let plane = &x[c * s.height * s.width..(c + 1) * s.height * s.width];
                for u in 0..k {
                    for v in 0..k {
                        let w = self.conv[((kk * s.channels + c) * k + u) * k + v];
                        for i in 0..oh {
                            let src = &plane[(i + u) * s.width + v..(i + u) * s.width + v + ow];
                            let dst = &mut zk[i * ow..(i + 1) * ow];
                            for (d, &sv) in dst.iter_mut().zip(src) {
                                *d += w * sv;
                            }
                        }
                    }
                }
            }
        }
        z
    }

    fn conv_pre(&self, x: &[f64]) -> Vec<f64> {
        let s = &self.spec;
        let n = s.out_h() * s.out_w();
        let mut z = self.conv_raw(x);
        for (kk, zk) in z.chunks_exact_mut(n).enumerate() {
            for v in zk {
                *v += self.bias[kk];
            }
        }
        z
    }

    /// Grid-average of `softplus(pre) - softplus(b)`, minus the offset.
    fn pool(&self, pre: &[f64]) -> Vec<f64> {
        let s = &self.spec;
        let (oh, ow) = (s.out_h(), s.out_w());
        let mut p = Vec::with_capacity(s.features());
        for kk in 0..s.kernels {
            let base = softplus(self.bias[kk]);
            let zk = &pre[kk * oh * ow..(kk + 1) * oh * ow];
            for &(y0, y1) in &self.cells_y {
                for &(x0, x1) in &self.cells_x {
                    let mut acc = 0.0;
                    for i in y0..y1 {
                        for &v in &zk[i * ow + x0..i * ow + x1] {
                            acc += softplus(v) - base;
                        }
                    }
                    p.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        for (v, o) in p.iter_mut().zip(&self.offset) {
            *v -= o;
        }
        p
    }

    fn project(&self, p: &[f64]) -> Vec<f64> {
        let f = self.spec.features();
        self.projection
            .chunks_exact(f)
            .map(|row| row.iter().zip(p).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let pre = self.conv_pre(x);
        let p = self.pool(&pre);
        let e = self.project(&p);
        Forward { pre, e }
    }

    /// Normalized embedding of a flat channel-major input.
    pub fn embed_f64(&self, x: &[f64]) -> Result<Embedding> {
        if x.len() != self.spec.channels * self.spec.height * self.spec.width {
            return Err(Error::InvalidTensor(format!(
                "input of length {} for extractor {:?}",
                x.len(),
                self.input_shape()
            )));
        }
        Embedding::new(self.forward(x).e)
    }

    pub fn extract(&self, img: &ImageTensor) -> Result<Embedding> {
        self.check_shape(img)?;
        self.embed_f64(&Self::to_f64(img))
    }

    /// `||f(x) - target||` and its gradient with respect to the flat input.
    pub fn loss_grad_f64(&self, x: &[f64], target: &Embedding) -> Result<(f64, Vec<f64>, bool)> {
        let s = &self.spec;
        if x.len() != s.channels * s.height * s.width || target.dim() != s.embedding_dim {
            return Err(Error::InvalidTensor(
                "loss input or target has the wrong size".into(),
            ));
        }
        let fw = self.forward(x);
        let norm = l2(&fw.e);
        if norm.is_nan() || norm <= 0.0 {
            return Err(Error::InvalidTensor("zero embedding".into()));
        }
        let f: Vec<f64> = fw.e.iter().map(|v| v / norm).collect();
        let diff: Vec<f64> = f.iter().zip(target.values()).map(|(a, b)| a - b).collect();
        let loss = l2(&diff);
        if loss < 1e-12 {
            return Ok((loss, vec![0.0; x.len()], true));
        }

        // d loss / d f, then through the normalization
        let g_f: Vec<f64> = diff.iter().map(|d| d / loss).collect();
        let fg: f64 = f.iter().zip(&g_f).map(|(a, b)| a * b).sum();
        let g_e: Vec<f64> = g_f
            .iter()
            .zip(&f)
            .map(|(g, fv)| (g - fv * fg) / norm)
            .collect();

        let nf = s.features();
        let mut g_p = vec![0.0; nf];
        for (row, ge) in self.projection.chunks_exact(nf).zip(&g_e) {
            for (gp, w) in g_p.iter_mut().zip(row) {
                *gp += ge * w;
            }
        }

        let (oh, ow, k) = (s.out_h(), s.out_w(), s.kernel_size);
        let mut g_z = vec![0.0; s.kernels * oh * ow];
        let mut idx = 0;
        for kk in 0..s.kernels {
            for &(y0, y1) in &self.cells_y {
                for &(x0, x1) in &self.cells_x {
                    let share = g_p[idx] / ((y1 - y0) * (x1 - x0)) as f64;
                    idx += 1;
                    for i in y0..y1 {
                        for j in x0..x1 {
                            let o = kk * oh * ow + i * ow + j;
                            g_z[o] = share * sigmoid(fw.pre[o]);
                        }
                    }
                }
            }
        }

        let mut g_x = vec![0.0; x.len()];
        for kk in 0..s.kernels {
            let gz = &g_z[kk * oh * ow..(kk + 1) * oh * ow];
            for c in 0..s.channels {
                let plane = &mut g_x[c * s.height * s.width..(c + 1) * s.height * s.width];
                for u in 0..k {
                    for v in 0..k {
                        let w = self.conv[((kk * s.channels + c) * k + u) * k + v];
                        for i in 0..oh {
                            let dst = &mut plane[(i + u) * s.width + v..(i + u) * s.width + v + ow];
                            for (d, &g) in dst.iter_mut().zip(&gz[i * ow..(i + 1) * ow]) {
                                *d += w * g;
                            }
                        }
                    }
                }
            }
        }
        Ok((loss, g_x, false))
    }

    pub fn loss_grad(&self, img: &ImageTensor, target: &Embedding) -> Result<LossGrad> {
        self.check_shape(img)?;
        let (loss, g, degenerate) = self.loss_grad_f64(&Self::to_f64(img), target)?;
        let (c, h, w) = img.shape();
        Ok(LossGrad {
            loss,
            grad: ImageTensor::new(c, h, w, g.into_iter().map(|v| v as f32).collect())?,
            degenerate,
        })
    }

    pub fn first_conv_response(&self, img: &ImageTensor) -> Result<ConvResponse> {
        self.check_shape(img)?;
        Ok(ConvResponse {
            kernels: self.spec.kernels,
            height: self.spec.out_h(),
            width: self.spec.out_w(),
            data: self.conv_raw(&Self::to_f64(img)),
        })
    }

    /// Writes the weights as consecutive raw tensors: spec, conv, bias,
    /// projection.
    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = &self.spec;
        let as_tensor = |c: usize, h: usize, w: usize, v: &[f64]| {
            ImageTensor::new(c, h, w, v.iter().map(|&x| x as f32).collect())
        };
        let header = [
            s.channels,
            s.height,
            s.width,
            s.kernels,
            s.kernel_size,
            s.grid,
            s.embedding_dim,
        ]
        .map(|v| v as f64);
        let mut bytes = encode_raw(&as_tensor(1, 1, header.len(), &header)?);
        bytes.extend(encode_raw(&as_tensor(
            s.kernels,
            s.channels,
            s.kernel_size * s.kernel_size,
            &self.conv,
        )?));
        bytes.extend(encode_raw(&as_tensor(1, 1, s.kernels, &self.bias)?));
        bytes.extend(encode_raw(&as_tensor(
            1,
            s.embedding_dim,
            s.features(),
            &self.projection,
        )?));
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut rest = bytes.as_slice();
        let mut next = || -> Result<Vec<f64>> {
            if rest.len() < RAW_HEADER_LEN {
                return Err(Error::Format("truncated weight file".into()));
            }
            let dims: Vec<usize> = (1..4)
                .map(|i| u32::from_le_bytes(rest[4 * i..4 * i + 4].try_into().unwrap()) as usize)
                .collect();
            let len = RAW_HEADER_LEN + 4 * dims.iter().product::<usize>();
            if rest.len() < len {
                return Err(Error::Format("truncated weight file".into()));
            }
            let t = decode_raw(&rest[..len])?;
            rest = &rest[len..];
            Ok(t.data().iter().map(|&v| v as f64).collect())
        };
        let h = next()?;
        if h.len() != 7 {
            return Err(Error::Format("weight header must hold 7 values".into()));
        }
        let spec = ExtractorSpec {
            channels: h[0] as usize,
            height: h[1] as usize,
            width: h[2] as usize,
            kernels: h[3] as usize,
            kernel_size: h[4] as usize,
            grid: h[5] as usize,
            embedding_dim: h[6] as usize,
        };
        spec.validate()?;
        let conv = next()?;
        let bias = next()?;
        let projection = next()?;
        if conv.len() != spec.kernels * spec.channels * spec.kernel_size * spec.kernel_size
            || bias.len() != spec.kernels
            || projection.len() != spec.embedding_dim * spec.features()
        {
            return Err(Error::Format(
                "weight tensor sizes disagree with header".into(),
            ));
        }
        Self::from_parts(spec, conv, bias, projection)
    }
}

/// Gradient of `||f(img) - target||` with respect to `img`.
pub fn grad_loss_wrt_input(
    model: &ToyExtractor,
    img: &ImageTensor,
    target: &Embedding,
) -> Result<LossGrad> {
    model.loss_grad(img, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ToyExtractor {
        ToyExtractor::new(ExtractorSpec::with_size(12, 12), 1).unwrap()
    }

    fn random_image(seed: u64, shape: (usize, usize, usize)) -> ImageTensor {
        let mut rng = RngStream::new(seed);
        ImageTensor::from_fn(shape.0, shape.1, shape.2, |_, _, _| {
            rng.uniform(0.0, 1.0) as f32
        })
        .unwrap()
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let m = model();
        let img = random_image(2, m.input_shape());
        let a = m.extract(&img).unwrap();
        let b = m.extract(&img).unwrap();
        assert_eq!(a, b);
        assert!((l2(a.values()) - 1.0).abs() < 1e-6);
        assert_eq!(a.dim(), 32);
    }

    #[test]
    fn cosine_basics() {
        let m = model();
        let e = m.extract(&random_image(3, m.input_shape())).unwrap();
        assert!((cosine_similarity(&e, &e) - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&e, &e.negated()) + 1.0).abs() < 1e-12);
        let e0 = Embedding::new(vec![1.0, 0.0, 0.0]).unwrap();
        let e1 = Embedding::new(vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(cosine_similarity(&e0, &e1), 0.0);
        assert!(Embedding::new(vec![0.0; 3]).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = model();
        let img = ImageTensor::zeros(3, 10, 12).unwrap();
        assert!(matches!(m.extract(&img), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn gradient_zero_at_target() {
        let m = model();
        let img = random_image(4, m.input_shape());
        let t = m.extract(&img).unwrap();
        let lg = grad_loss_wrt_input(&m, &img, &t).unwrap();
        assert!(lg.degenerate);
        assert!(lg.loss < 1e-12);
        assert!(lg.grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(lg.grad.shape(), img.shape());
    }

    #[test]
    fn conv_response_is_linear_and_flat_on_constants() {
        let m = model();
        let a = random_image(5, m.input_shape());
        let b = random_image(6, m.input_shape());
        let sum = ImageTensor::new(
            3,
            12,
            12,
            a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
        )
        .unwrap();
        let (ra, rb, rs) = (
            m.first_conv_response(&a).unwrap(),
            m.first_conv_response(&b).unwrap(),
            m.first_conv_response(&sum).unwrap(),
        );
        for i in 0..rs.data.len() {
            assert!((rs.data[i] - ra.data[i] - rb.data[i]).abs() < 1e-5);
        }
        let flat = m
            .first_conv_response(&ImageTensor::filled(3, 12, 12, 0.4).unwrap())
            .unwrap();
        let n = flat.height * flat.width;
        for k in flat.data.chunks_exact(n) {
            assert!(k.iter().all(|v| (v - k[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn weights_round_trip() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.iwt");
        m.save_weights(&p).unwrap();
        let back = ToyExtractor::load_weights(&p).unwrap();
        assert_eq!(back, m);
    }
}
