use super::image::{RgbImage, Tile};
use super::QcRejection;
use crate::error::{Error, Result};

/// Population variance of the 4-neighbour Laplacian of the tile's luma,
/// with replicated borders.
pub fn laplacian_variance(tile: &RgbImage) -> f64 {
    let (w, h) = (tile.width as isize, tile.height as isize);
    if w == 0 || h == 0 {
        return 0.0;
    }
    let g = tile.grayscale();
    let at = |x: isize, y: isize| g[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut resp = Vec::with_capacity(g.len());
    for y in 0..h {
        for x in 0..w {
            resp.push(at(x, y - 1) + at(x - 1, y) + at(x + 1, y) + at(x, y + 1) - 4.0 * at(x, y));
        }
    }
    let n = resp.len() as f64;
    let mean = resp.iter().sum::<f64>() / n;
    resp.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n
}

/// Keep tiles whose Laplacian variance reaches `threshold`; input order is
/// preserved.
pub fn blur_filter(tiles: Vec<Tile>, threshold: f64) -> Result<(Vec<Tile>, Vec<QcRejection>)> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidInput(format!("blur threshold {threshold} must be >= 0")));
    }
    let mut kept = Vec::with_capacity(tiles.len());
    let mut rejected = Vec::new();
    for (i, t) in tiles.into_iter().enumerate() {
        let v = laplacian_variance(&t.image);
        if v >= threshold {
            kept.push(t);
        } else {
            rejected.push(QcRejection {
                index: i,
                x: t.x,
                y: t.y,
                reason: "blur",
                score: v,
            });
        }
    }
    Ok((kept, rejected))
}

/// Linear-interpolated percentile, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Default blur threshold: the 5th percentile of sharp-tile variances.
pub fn calibrate_blur_threshold(sharp_tiles: &[Tile]) -> Result<f64> {
    let v: Vec<f64> = sharp_tiles.iter().map(|t| laplacian_variance(&t.image)).collect();
    percentile(&v, 0.05).ok_or_else(|| Error::InvalidInput("no sharp tiles to calibrate on".into()))
}
