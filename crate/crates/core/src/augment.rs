//! Conventional image augmentation used as the comparison arm: flips,
//! small rotations, crop-and-resize, random erasing and colour jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::ImageTensor;
use crate::error::Result;
use crate::evaluation::LoadedSet;
use crate::util::stable_hash_parts;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub copies: usize,
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    pub min_crop_scale: f64,
    pub erase_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            copies: 3,
            flip_prob: 0.5,
            max_rotation_deg: 10.0,
            min_crop_scale: 0.8,
            erase_prob: 0.5,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
        }
    }
}

/// Bilinear sample of channel `c` at fractional `(y, x)`, clamped to the border.
fn sample(img: &ImageTensor, c: usize, y: f64, x: f64) -> f64 {
    let (_, h, w) = img.shape();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
    let bot = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resamples the image through an inverse map from output to input coordinates.
fn warp(img: &ImageTensor, map: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f64> {
    let (c, h, w) = img.shape();
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = map(y as f64, x as f64);
            for ch in 0..c {
                out[(ch * h + y) * w + x] = sample(img, ch, sy, sx);
            }
        }
    }
    out
}

pub fn hflip(img: &ImageTensor) -> Result<ImageTensor> {
    let (c, h, w) = img.shape();
    let data = warp(img, |y, x| (y, (w - 1) as f64 - x));
    ImageTensor::from_clamped(img.id(), c, h, w, data)
}

pub fn rotate(img: &ImageTensor, degrees: f64) -> Result<ImageTensor> {
    let (c, h, w) = img.shape();
    let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
    let (s, co) = degrees.to_radians().sin_cos();
    let data = warp(img, |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (cy + co * dy - s * dx, cx + s * dy + co * dx)
    });
    ImageTensor::from_clamped(img.id(), c, h, w, data)
}

/// Crops a `scale`-sized window at fractional offset `(oy, ox)` in `[0, 1]`
/// and resizes it back to the full frame.
pub fn crop_resize(img: &ImageTensor, scale: f64, oy: f64, ox: f64) -> Result<ImageTensor> {
    let (c, h, w) = img.shape();
    let (ch, cw) = (scale * (h - 1) as f64, scale * (w - 1) as f64);
    let (y0, x0) = (oy * ((h - 1) as f64 - ch), ox * ((w - 1) as f64 - cw));
    let sy = if h > 1 { ch / (h - 1) as f64 } else { 0.0 };
    let sx = if w > 1 { cw / (w - 1) as f64 } else { 0.0 };
    let data = warp(img, |y, x| (y0 + y * sy, x0 + x * sx));
    ImageTensor::from_clamped(img.id(), c, h, w, data)
}

/// Fills a rectangle with mid grey.
pub fn erase(img: &ImageTensor, y0: usize, x0: usize, eh: usize, ew: usize) -> Result<ImageTensor> {
    let (c, h, w) = img.shape();
    let mut data = img.data().to_vec();
    for ch in 0..c {
        for y in y0..(y0 + eh).min(h) {
            for x in x0..(x0 + ew).min(w) {
                data[(ch * h + y) * w + x] = 0.5;
            }
        }
    }
    ImageTensor::from_clamped(img.id(), c, h, w, data)
}

/// Brightness, contrast and saturation factors applied in that order.
pub fn color_jitter(img: &ImageTensor, brightness: f64, contrast: f64, saturation: f64) -> Result<ImageTensor> {
    let (c, h, w) = img.shape();
    let n = h * w;
    let mut data: Vec<f64> = img.data().iter().map(|v| (v * brightness).clamp(0.0, 1.0)).collect();
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    data.iter_mut()
        .for_each(|v| *v = ((*v - mean) * contrast + mean).clamp(0.0, 1.0));
    if c >= 3 {
        for i in 0..n {
            let grey = 0.299 * data[i] + 0.587 * data[n + i] + 0.114 * data[2 * n + i];
            for ch in 0..3 {
                let v = &mut data[ch * n + i];
                *v = ((*v - grey) * saturation + grey).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_clamped(img.id(), c, h, w, data)
}

/// One random augmentation of `img`.
pub fn augment(img: &ImageTensor, config: &AugmentConfig, rng: &mut impl Rng) -> Result<ImageTensor> {
    let (_, h, w) = img.shape();
    let mut out = img.clone();
    if rng.random_bool(config.flip_prob.clamp(0.0, 1.0)) {
        out = hflip(&out)?;
    }
    if config.max_rotation_deg > 0.0 {
        let deg = rng.random_range(-config.max_rotation_deg..=config.max_rotation_deg);
        out = rotate(&out, deg)?;
    }
    if config.min_crop_scale < 1.0 {
        let scale = rng.random_range(config.min_crop_scale..=1.0);
        out = crop_resize(&out, scale, rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0))?;
    }
    if rng.random_bool(config.erase_prob.clamp(0.0, 1.0)) {
        let eh = (h / 4).max(1);
        let ew = (w / 4).max(1);
        out = erase(&out, rng.random_range(0..h), rng.random_range(0..w), eh, ew)?;
    }
    fn jitter(rng: &mut impl Rng, amount: f64) -> f64 {
        if amount > 0.0 {
            rng.random_range(1.0 - amount..=1.0 + amount)
        } else {
            1.0
        }
    }
    let b = jitter(rng, config.brightness);
    let c = jitter(rng, config.contrast);
    let s = jitter(rng, config.saturation);
    color_jitter(&out, b, c, s)
}

/// The original items followed by `copies` augmented versions of each.
pub fn augment_set(set: &LoadedSet, config: &AugmentConfig, seed: u64) -> Result<LoadedSet> {
    let mut items = set.items.clone();
    for copy in 0..config.copies {
        for (img, label) in &set.items {
            let mut rng = ChaCha8Rng::seed_from_u64(stable_hash_parts(&[
                img.id().as_bytes(),
                &seed.to_le_bytes(),
                &(copy as u64).to_le_bytes(),
            ]));
            let aug = augment(img, config, &mut rng)?.with_id(format!("{}__aug{copy}", img.id()));
            items.push((aug, label.clone()));
        }
    }
    LoadedSet::new(format!("{}_augmented", set.name), items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> ImageTensor {
        let data = (0..3 * 4 * 5).map(|i| (i % 20) as f64 / 20.0).collect();
        ImageTensor::new("r", 3, 4, 5, data).unwrap()
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = ramp();
        assert_eq!(hflip(&hflip(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn identity_parameters_preserve_image() {
        let img = ramp();
        let r = rotate(&img, 0.0).unwrap();
        let c = crop_resize(&img, 1.0, 0.0, 0.0).unwrap();
        let j = color_jitter(&img, 1.0, 1.0, 1.0).unwrap();
        for out in [r, c, j] {
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn augment_set_is_seeded() {
        let set = LoadedSet::new("T", vec![(ramp(), "x".to_string())]).unwrap();
        let a = augment_set(&set, &AugmentConfig::default(), 4).unwrap();
        let b = augment_set(&set, &AugmentConfig::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.items.iter().all(|(_, l)| l == "x"));
    }
}
