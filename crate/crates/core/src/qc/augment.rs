use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::RgbImage;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Ranges are relative, e.g. 0.15 draws a factor uniformly in ±15%.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Fraction of a full hue turn.
    pub hue: f64,
    /// Variance of additive noise on [0, 1] intensities.
    pub noise_variance: f64,
    pub rotate: bool,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            brightness: 0.15,
            contrast: 0.15,
            saturation: 0.15,
            hue: 0.15,
            noise_variance: 0.001,
            rotate: true,
        }
    }
}

impl AugmentParams {
    pub fn none() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            noise_variance: 0.0,
            rotate: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("hue", self.hue),
            ("noise_variance", self.noise_variance),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("augment {name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Rotate by `quarter_turns` × 90° clockwise: pixel (x, y) of a w×h image
/// lands on (h − 1 − y, x).
pub fn rotate90(img: &RgbImage, quarter_turns: usize) -> RgbImage {
    let mut out = img.clone();
    for _ in 0..quarter_turns % 4 {
        let (w, h) = (out.width, out.height);
        let mut next = RgbImage::filled(h, w, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                next.set(h - 1 - y, x, out.get(x, y));
            }
        }
        out = next;
    }
    out
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    } / 6.0;
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

fn factor(range: f64, rng: &mut Rng) -> f64 {
    if range == 0.0 {
        0.0
    } else {
        rng.random_range(-range..=range)
    }
}

/// Random photometric jitter, Gaussian noise and a random quarter turn.
pub fn augment(tile: &RgbImage, params: &AugmentParams, rng: &mut Rng) -> Result<RgbImage> {
    params.validate()?;
    let b = factor(params.brightness, rng);
    let c = factor(params.contrast, rng);
    let s = factor(params.saturation, rng);
    let h = factor(params.hue, rng);
    let turns = if params.rotate { rng.random_range(0..4) } else { 0 };
    let noise = (params.noise_variance > 0.0).then(|| Normal::new(0.0, params.noise_variance.sqrt()).expect("finite sd"));

    let mut px: Vec<[f64; 3]> = tile.pixels.iter().map(|p| p.map(|v| f64::from(v) / 255.0)).collect();
    if b != 0.0 {
        px.iter_mut().for_each(|p| *p = p.map(|v| v * (1.0 + b)));
    }
    if c != 0.0 {
        let luma = |p: &[f64; 3]| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        let mean = px.iter().map(luma).sum::<f64>() / px.len().max(1) as f64;
        px.iter_mut().for_each(|p| *p = p.map(|v| (v - mean) * (1.0 + c) + mean));
    }
    if s != 0.0 {
        for p in &mut px {
            let g = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            *p = p.map(|v| g + (v - g) * (1.0 + s));
        }
    }
    if h != 0.0 {
        for p in &mut px {
            let [hh, ss, vv] = rgb_to_hsv(p.map(|v| v.clamp(0.0, 1.0)));
            *p = hsv_to_rgb([hh + h, ss, vv]);
        }
    }
    if let Some(n) = noise {
        px.iter_mut().for_each(|p| *p = p.map(|v| v + n.sample(rng)));
    }
    let pixels = px
        .iter()
        .map(|p| p.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
        .collect();
    let out = RgbImage::from_pixels(tile.width, tile.height, pixels)?;
    Ok(rotate90(&out, turns))
}
