//! Raster image ingestion: 8/16-bit grayscale or RGB PNG, scaled to [0,1].
//! Complex data never travels through rasters; it uses the tensor file.

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics;
use crate::tensor::{Dtype, Tensor};

/// Load a PNG as an H×W (grayscale) or H×W×3 (RGB) real tensor in [0,1].
pub fn load_png(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let data: Vec<f64> = buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            Tensor::from_real(&[h, w], data)
        }
        DynamicImage::ImageLuma16(buf) => {
            let data: Vec<f64> = buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
            Tensor::from_real(&[h, w], data)
        }
        DynamicImage::ImageRgb8(buf) => {
            let mut data = Vec::with_capacity(h * w * 3);
            for p in buf.pixels() {
                for c in 0..3 {
                    data.push(p.0[c] as f64 / 255.0);
                }
            }
            Tensor::from_real(&[h, w, 3], data)
        }
        DynamicImage::ImageRgb16(buf) => {
            let mut data = Vec::with_capacity(h * w * 3);
            for p in buf.pixels() {
                for c in 0..3 {
                    data.push(p.0[c] as f64 / 65535.0);
                }
            }
            Tensor::from_real(&[h, w, 3], data)
        }
        other => {
            // Normalize remaining encodings through rgb8.
            let buf = other.to_rgb8();
            let mut data = Vec::with_capacity(h * w * 3);
            for p in buf.pixels() {
                for c in 0..3 {
                    data.push(p.0[c] as f64 / 255.0);
                }
            }
            Tensor::from_real(&[h, w, 3], data)
        }
    }
}

/// Save a real tensor as a 16-bit PNG, clamping to [0,1]. Complex tensors
/// are saved as their magnitude, rescaled by its maximum.
pub fn save_png(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let real = match t.dtype() {
        Dtype::Real64 => t.clone(),
        Dtype::Complex128 => {
            let m = metrics::magnitude(t)?;
            let peak = m.as_real()?.iter().cloned().fold(0.0f64, f64::max);
            if peak > 0.0 {
                m.scale(1.0 / peak)
            } else {
                m
            }
        }
    };
    let shape = real.shape();
    let to_u16 = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    match shape.len() {
        2 => {
            let (h, w) = (shape[0], shape[1]);
            let v = real.as_real()?;
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                    Luma([to_u16(v[y as usize * w + x as usize])])
                });
            buf.save(path)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
        }
        3 if shape[2] == 3 => {
            let (h, w) = (shape[0], shape[1]);
            let v = real.as_real()?;
            let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
                ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                    let base = (y as usize * w + x as usize) * 3;
                    Rgb([to_u16(v[base]), to_u16(v[base + 1]), to_u16(v[base + 2])])
                });
            buf.save(path)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
        }
        other => Err(Error::Image(format!(
            "cannot rasterize tensor of shape {other:?}"
        ))),
    }
}

/// Load either container by extension: `.pnpt` tensor files verbatim,
/// anything else through the raster decoder.
pub fn load_signal(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pnpt") => super::tensor_file::load(path),
        _ => load_png(path),
    }
}
