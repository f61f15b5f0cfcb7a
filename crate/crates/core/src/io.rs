//! Image file I/O: 8/16-bit PNG rasters and the exact raw-tensor format.
//!
//! Raw-tensor layout (little-endian): 4-byte magic `IWT1`, then `channels`,
//! `height`, `width` as `u32`, then `channels * height * width` `f32`
//! samples in channel-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb, Rgba};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const RAW_MAGIC: [u8; 4] = *b"IWT1";
pub const RAW_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Png,
    Raw,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("png") => Ok(FileFormat::Png),
            Some("iwt") | Some("raw") => Ok(FileFormat::Raw),
            other => Err(Error::UnsupportedFormat(format!(
                "{}: extension {:?}",
                path.display(),
                other.unwrap_or("")
            ))),
        }
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    match FileFormat::from_path(path)? {
        FileFormat::Raw => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_raw(&bytes)
        }
        FileFormat::Png => {
            let img = image::open(path)?;
            from_dynamic(img)
        }
    }
}

pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match FileFormat::from_path(path)? {
        FileFormat::Raw => fs::write(path, encode_raw(img)).map_err(|e| Error::io(path, e)),
        FileFormat::Png => {
            let dynamic = to_dynamic(img)?;
            dynamic.save(path)?;
            Ok(())
        }
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_dynamic(img: &ImageTensor) -> Result<DynamicImage> {
    let (ch, h, w) = img.shape();
    let mut interleaved = Vec::with_capacity(ch * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                interleaved.push(quantize(img.get(c, y, x)));
            }
        }
    }
    let (w32, h32) = (w as u32, h as u32);
    let bad = || Error::InvalidTensor("raster buffer size".into());
    Ok(match ch {
        1 => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w32, h32, interleaved).ok_or_else(bad)?,
        ),
        3 => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w32, h32, interleaved).ok_or_else(bad)?,
        ),
        4 => DynamicImage::ImageRgba8(
            ImageBuffer::<Rgba<u8>, _>::from_raw(w32, h32, interleaved).ok_or_else(bad)?,
        ),
        n => {
            return Err(Error::UnsupportedFormat(format!(
                "{n}-channel tensors cannot be written as PNG; use .iwt"
            )))
        }
    })
}

fn from_dynamic(img: DynamicImage) -> Result<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidTensor("zero-sized raster".into()));
    }
    let (ch, samples, scale): (usize, Vec<f32>, f32) = match img {
        DynamicImage::ImageLuma8(b) => {
            (1, b.into_raw().into_iter().map(f32::from).collect(), 255.0)
        }
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(f32::from).collect(), 255.0),
        DynamicImage::ImageRgba8(b) => {
            (4, b.into_raw().into_iter().map(f32::from).collect(), 255.0)
        }
        DynamicImage::ImageLuma16(b) => (
            1,
            b.into_raw().into_iter().map(f32::from).collect(),
            65535.0,
        ),
        DynamicImage::ImageRgb16(b) => (
            3,
            b.into_raw().into_iter().map(f32::from).collect(),
            65535.0,
        ),
        DynamicImage::ImageRgba16(b) => (
            4,
            b.into_raw().into_iter().map(f32::from).collect(),
            65535.0,
        ),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "pixel layout {:?}",
                other.color()
            )))
        }
    };
    let mut data = vec![0.0; ch * h * w];
    for (i, v) in samples.into_iter().enumerate() {
        let c = i % ch;
        let p = i / ch;
        data[c * h * w + p] = v / scale;
    }
    ImageTensor::new(ch, h, w, data)
}

pub fn encode_raw(img: &ImageTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 4 * img.len());
    out.extend_from_slice(&RAW_MAGIC);
    for d in [img.channels(), img.height(), img.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8]) -> Result<ImageTensor> {
    if bytes.len() < RAW_HEADER_LEN || bytes[..4] != RAW_MAGIC {
        return Err(Error::UnsupportedFormat("missing raw-tensor header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (ch, h, w) = (dim(1), dim(2), dim(3));
    let n = ch
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::InvalidTensor("dimension overflow".into()))?;
    let body = &bytes[RAW_HEADER_LEN..];
    if body.len() != 4 * n {
        return Err(Error::InvalidTensor(format!(
            "raw body has {} bytes, header implies {}",
            body.len(),
            4 * n
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImageTensor::new(ch, h, w, data)
}

/// Writes one raw tensor to a stream.
pub fn write_raw(mut w: impl Write, img: &ImageTensor) -> std::io::Result<()> {
    w.write_all(&encode_raw(img))
}

/// Reads exactly one raw tensor from a stream.
pub fn read_raw(mut r: impl Read) -> Result<ImageTensor> {
    let mut header = [0u8; RAW_HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| Error::io("<stream>", e))?;
    if header[..4] != RAW_MAGIC {
        return Err(Error::UnsupportedFormat("missing raw-tensor header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let n = dim(1) * dim(2) * dim(3);
    let mut body = vec![0u8; 4 * n];
    r.read_exact(&mut body)
        .map_err(|e| Error::io("<stream>", e))?;
    let mut all = header.to_vec();
    all.extend_from_slice(&body);
    decode_raw(&all)
}
