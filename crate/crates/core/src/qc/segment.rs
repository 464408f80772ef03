use super::image::{Mask, SlideImage, Tile, TILE_SIZE};

/// Saturation below this (on a 0-255 scale) is never tissue, whatever Otsu
/// picks; keeps near-white slides from splitting their scanner noise.
pub const MIN_TISSUE_SATURATION: u8 = 20;

fn saturation(p: [u8; 3]) -> u8 {
    let max = *p.iter().max().unwrap();
    let min = *p.iter().min().unwrap();
    if max == 0 {
        0
    } else {
        ((u32::from(max - min) * 255 + u32::from(max) / 2) / u32::from(max)) as u8
    }
}

/// Otsu's threshold over a 256-bin histogram: values `> t` form the
/// foreground.
pub fn otsu_threshold(values: &[u8]) -> u8 {
    let mut hist = [0u64; 256];
    for &v in values {
        hist[v as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0u8);
    for t in 0..256 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t as u8;
        }
    }
    best_t
}

fn morph(mask: &Mask, dilate: bool) -> Mask {
    let (w, h) = (mask.width as isize, mask.height as isize);
    let mut out = Mask::empty(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            let mut v = !dilate;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let s = mask.get((x + dx).clamp(0, w - 1) as usize, (y + dy).clamp(0, h - 1) as usize);
                    if dilate {
                        v |= s;
                    } else {
                        v &= s;
                    }
                }
            }
            out.set(x as usize, y as usize, v);
        }
    }
    out
}

/// Tissue mask: Otsu on HSV saturation, then a 3×3 opening and closing.
pub fn segment_tissue(slide: &SlideImage) -> Mask {
    let sat: Vec<u8> = slide.image.pixels.iter().map(|&p| saturation(p)).collect();
    let t = otsu_threshold(&sat).max(MIN_TISSUE_SATURATION);
    let raw = Mask {
        width: slide.width(),
        height: slide.height(),
        data: sat.iter().map(|&s| s > t).collect(),
    };
    let opened = morph(&morph(&raw, false), true);
    morph(&morph(&opened, true), false)
}

/// Minimum tissue fraction for a tile to be kept.
pub const MIN_TILE_TISSUE: f64 = 0.25;

/// Non-overlapping 128×128 tiles of the 2× downsampled slide whose 20X
/// footprint is at least a quarter tissue, in row-major grid order.
pub fn tile_slide(slide: &SlideImage, mask: &Mask) -> Vec<Tile> {
    grid_tiles(slide, Some(mask))
}

/// Every grid tile regardless of tissue.
pub fn all_tiles(slide: &SlideImage) -> Vec<Tile> {
    grid_tiles(slide, None)
}

fn grid_tiles(slide: &SlideImage, mask: Option<&Mask>) -> Vec<Tile> {
    let low = slide.image.downsample2();
    let span = 2 * TILE_SIZE;
    let mut out = Vec::new();
    for ty in 0..low.height / TILE_SIZE {
        for tx in 0..low.width / TILE_SIZE {
            let (x, y) = (tx * span, ty * span);
            if mask.is_some_and(|m| m.coverage(x, y, span, span) < MIN_TILE_TISSUE) {
                continue;
            }
            out.push(Tile {
                x,
                y,
                image: low.crop(tx * TILE_SIZE, ty * TILE_SIZE, TILE_SIZE, TILE_SIZE),
            });
        }
    }
    out
}
