use log::warn;

use super::{RgbImage, Tile};
use crate::error::{Error, Result};

/// Per-channel intensity mean and standard deviation of reference tissue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefColorStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

fn channel_stats<'a>(images: impl Iterator<Item = &'a RgbImage>) -> ([f64; 3], [f64; 3], usize) {
    let (mut sum, mut sq, mut n) = ([0.0f64; 3], [0.0f64; 3], 0usize);
    for img in images {
        for p in &img.pixels {
            for c in 0..3 {
                let v = f64::from(p[c]);
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        n += img.pixels.len();
    }
    if n == 0 {
        return ([0.0; 3], [0.0; 3], 0);
    }
    let mean = sum.map(|s| s / n as f64);
    let mut std = [0.0; 3];
    for c in 0..3 {
        std[c] = (sq[c] / n as f64 - mean[c] * mean[c]).max(0.0).sqrt();
    }
    (mean, std, n)
}

impl RefColorStats {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        let s = Self { mean, std };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid reference colour stats {self:?}")));
        }
        Ok(())
    }

    /// Stats over every pixel of the given reference tiles.
    pub fn from_tiles(tiles: &[Tile]) -> Result<Self> {
        let (mean, std, n) = channel_stats(tiles.iter().map(|t| &t.image));
        if n == 0 {
            return Err(Error::InvalidInput("no reference tiles".into()));
        }
        Self::new(mean, std)
    }
}

/// Per-channel affine map taking the tile population's mean and standard
/// deviation to the reference values. A channel with zero spread is left
/// unchanged.
pub fn adapt_colors(tiles: &[Tile], reference: &RefColorStats) -> Result<Vec<Tile>> {
    reference.validate()?;
    let (mean, std, n) = channel_stats(tiles.iter().map(|t| &t.image));
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut gain = [1.0; 3];
    let mut shift = [0.0; 3];
    for c in 0..3 {
        if std[c] > 0.0 {
            gain[c] = reference.std[c] / std[c];
            shift[c] = reference.mean[c] - gain[c] * mean[c];
        } else {
            warn!("colour channel {c} has zero variance; left unadapted");
        }
    }
    Ok(tiles
        .iter()
        .map(|t| {
            let mut out = t.clone();
            for p in &mut out.image.pixels {
                for c in 0..3 {
                    let v = gain[c] * f64::from(p[c]) + shift[c];
                    p[c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
            out
        })
        .collect())
}
