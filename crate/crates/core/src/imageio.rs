//! PNG reading and writing for [`ImageTensor`]s. Images are stored as 16-bit
//! PNGs so a save/load cycle moves no value by more than half of 1/65535.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, LumaA, Rgb, Rgba};

use crate::backends::ImageTensor;
use crate::error::{Error, Result};

const MAX: f64 = u16::MAX as f64;

fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * MAX).round() as u16
}

/// Interleaves a planar `(c, h, w)` tensor into row-major pixels.
fn interleaved(image: &ImageTensor) -> Vec<u16> {
    let (c, h, w) = image.shape();
    let mut out = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize(image.get(ch, y, x)));
            }
        }
    }
    out
}

pub fn save_png(path: &Path, image: &ImageTensor) -> Result<()> {
    let (c, h, w) = image.shape();
    let (w32, h32) = (w as u32, h as u32);
    let raw = interleaved(image);
    let too_small = || Error::Image("pixel buffer does not match dimensions".into());
    let dynamic = match c {
        1 => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, raw).ok_or_else(too_small)?,
        ),
        2 => DynamicImage::ImageLumaA16(
            ImageBuffer::<LumaA<u16>, _>::from_raw(w32, h32, raw).ok_or_else(too_small)?,
        ),
        3 => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, raw).ok_or_else(too_small)?,
        ),
        4 => DynamicImage::ImageRgba16(
            ImageBuffer::<Rgba<u16>, _>::from_raw(w32, h32, raw).ok_or_else(too_small)?,
        ),
        other => {
            return Err(Error::Image(format!(
                "cannot store {other} channels as PNG"
            )))
        }
    };
    dynamic
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Loads a PNG as a planar tensor. Grey images keep one channel, colour
/// images keep three, and alpha is kept when present.
pub fn load_png(path: &Path, id: &str) -> Result<ImageTensor> {
    let dynamic = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let (c, raw): (usize, Vec<u16>) = match dynamic.color().channel_count() {
        1 => (1, dynamic.into_luma16().into_raw()),
        2 => (2, dynamic.into_luma_alpha16().into_raw()),
        3 => (3, dynamic.into_rgb16().into_raw()),
        _ => (4, dynamic.into_rgba16().into_raw()),
    };
    let mut data = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = f64::from(raw[(y * w + x) * c + ch]) / MAX;
            }
        }
    }
    ImageTensor::new(id, c, h, w, data)
}
