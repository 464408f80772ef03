use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::qc::{gaussian_blur, Mask, RgbImage, SlideImage};
use crate::rng::Rng;
use crate::taxonomy::SpecimenClass;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TissueShape {
    /// One to three random ellipses.
    Blobs,
    /// Axis-aligned rectangle `[x0, x1) × [y0, y1)`.
    Rect {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    },
    Full,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlideOptions {
    pub ink: bool,
    pub blur: bool,
    pub width: usize,
    pub height: usize,
    pub tissue: TissueShape,
    /// Gaussian sigma of the blurred region, in 20X pixels.
    pub blur_sigma: f64,
}

impl Default for SlideOptions {
    fn default() -> Self {
        Self {
            ink: false,
            blur: false,
            width: 512,
            height: 512,
            tissue: TissueShape::Blobs,
            blur_sigma: 4.0,
        }
    }
}

pub const INK_COLORS: [[u8; 3]; 3] = [[25, 45, 190], [25, 150, 55], [20, 20, 20]];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSlide {
    pub slide: SlideImage,
    pub tissue: Mask,
    pub ink: Mask,
    pub blur: Mask,
    pub ink_color: Option<[u8; 3]>,
}

fn jitter(c: [u8; 3], amount: f64, rng: &mut Rng) -> [u8; 3] {
    let n = Normal::new(0.0, amount).expect("positive sd");
    c.map(|v| (f64::from(v) + n.sample(rng)).round().clamp(0.0, 255.0) as u8)
}

fn tissue_mask(shape: TissueShape, w: usize, h: usize, rng: &mut Rng) -> Mask {
    let mut m = Mask::empty(w, h);
    match shape {
        TissueShape::None => {}
        TissueShape::Full => m.data.fill(true),
        TissueShape::Rect { x0, y0, x1, y1 } => {
            for y in y0.min(h)..y1.min(h) {
                for x in x0.min(w)..x1.min(w) {
                    m.set(x, y, true);
                }
            }
        }
        TissueShape::Blobs => {
            let n = rng.random_range(1..=3);
            for _ in 0..n {
                let cx = rng.random_range(0.25..0.75) * w as f64;
                let cy = rng.random_range(0.25..0.75) * h as f64;
                let rx = rng.random_range(0.12..0.3) * w as f64;
                let ry = rng.random_range(0.12..0.3) * h as f64;
                for y in 0..h {
                    for x in 0..w {
                        let dx = (x as f64 - cx) / rx;
                        let dy = (y as f64 - cy) / ry;
                        if dx * dx + dy * dy <= 1.0 {
                            m.set(x, y, true);
                        }
                    }
                }
            }
        }
    }
    m
}

fn stain_colors(class: SpecimenClass) -> ([u8; 3], [u8; 3]) {
    // (stroma, nuclei); pigment-heavier nuclei for melanocytic classes
    match class {
        SpecimenClass::Basaloid => ([228, 160, 205], [95, 55, 150]),
        SpecimenClass::Squamous => ([236, 150, 190], [120, 70, 160]),
        SpecimenClass::Other => ([232, 165, 200], [110, 70, 150]),
        _ => ([226, 158, 196], [105, 60, 95]),
    }
}

/// White canvas with stained tissue, optional ink strokes and an optional
/// blurred region, plus the ground-truth masks.
pub fn gen_synthetic_slide(class: SpecimenClass, options: &SlideOptions, rng: &mut Rng) -> crate::Result<SyntheticSlide> {
    let (w, h) = (options.width, options.height);
    let tissue = tissue_mask(options.tissue, w, h, rng);
    let (stroma, nucleus) = stain_colors(class);
    let mut img = RgbImage::filled(w, h, [245, 245, 245]);
    for y in 0..h {
        for x in 0..w {
            let base = if tissue.get(x, y) { stroma } else { [245, 245, 245] };
            let amount = if tissue.get(x, y) { 10.0 } else { 2.0 };
            img.set(x, y, jitter(base, amount, rng));
        }
    }
    // nuclei: small dark disks inside tissue
    let n_nuclei = tissue.count() / 60;
    for _ in 0..n_nuclei {
        let (cx, cy) = (rng.random_range(0..w), rng.random_range(0..h));
        if !tissue.get(cx, cy) {
            continue;
        }
        let r = rng.random_range(2i64..=4) as isize;
        let color = jitter(nucleus, 12.0, rng);
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (cx as isize + dx, cy as isize + dy);
                if dx * dx + dy * dy <= r * r && (0..w as isize).contains(&x) && (0..h as isize).contains(&y) {
                    img.set(x as usize, y as usize, color);
                }
            }
        }
    }

    let mut ink = Mask::empty(w, h);
    let mut ink_color = None;
    if options.ink {
        let color = INK_COLORS[rng.random_range(0..INK_COLORS.len())];
        ink_color = Some(color);
        for _ in 0..rng.random_range(1..=3) {
            let (x0, y0) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let (x1, y1) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let half = rng.random_range(5.0..9.0);
            let (dx, dy) = (x1 - x0, y1 - y0);
            let len2 = (dx * dx + dy * dy).max(1e-9);
            for y in 0..h {
                for x in 0..w {
                    let t = (((x as f64 - x0) * dx + (y as f64 - y0) * dy) / len2).clamp(0.0, 1.0);
                    let (px, py) = (x0 + t * dx - x as f64, y0 + t * dy - y as f64);
                    if px * px + py * py <= half * half {
                        ink.set(x, y, true);
                    }
                }
            }
        }
        for (i, p) in img.pixels.iter_mut().enumerate() {
            if ink.data[i] {
                *p = color;
            }
        }
    }

    let mut blur = Mask::empty(w, h);
    if options.blur {
        // block-aligned so every 10X tile is either fully sharp or fully blurred
        let blocks_x = (w / 256).max(1);
        let blocks_y = (h / 256).max(1);
        let horizontal = rng.random_bool(0.5);
        let (bx0, bx1, by0, by1) = if horizontal {
            let split = (blocks_y / 2).max(1);
            if rng.random_bool(0.5) { (0, blocks_x, 0, split) } else { (0, blocks_x, split, blocks_y) }
        } else {
            let split = (blocks_x / 2).max(1);
            if rng.random_bool(0.5) { (0, split, 0, blocks_y) } else { (split, blocks_x, 0, blocks_y) }
        };
        let (x0, x1) = (bx0 * 256, (bx1 * 256).min(w));
        let (y0, y1) = (by0 * 256, (by1 * 256).min(h));
        let blurred = gaussian_blur(&img, options.blur_sigma);
        for y in y0..y1 {
            for x in x0..x1 {
                blur.set(x, y, true);
                img.set(x, y, blurred.get(x, y));
            }
        }
    }

    Ok(SyntheticSlide {
        slide: SlideImage::new(img, "20X", 0.24)?,
        tissue,
        ink,
        blur,
        ink_color,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn plain_slide_has_no_ink_or_blur() {
        let s = gen_synthetic_slide(SpecimenClass::Basaloid, &SlideOptions::default(), &mut rng_from(1)).unwrap();
        assert!(s.ink.is_empty() && s.blur.is_empty());
        assert!(!s.tissue.is_empty());
    }

    #[test]
    fn ink_pixels_take_a_stroke_color() {
        let opts = SlideOptions {
            ink: true,
            ..SlideOptions::default()
        };
        for seed in 0..5 {
            let s = gen_synthetic_slide(SpecimenClass::Other, &opts, &mut rng_from(seed)).unwrap();
            let color = s.ink_color.unwrap();
            assert!(INK_COLORS.contains(&color));
            assert!(!s.ink.is_empty());
            for (p, &m) in s.slide.image.pixels.iter().zip(&s.ink.data) {
                if m {
                    assert_eq!(*p, color);
                }
            }
        }
    }

    #[test]
    fn seeded_generation_is_repeatable() {
        let opts = SlideOptions {
            ink: true,
            blur: true,
            ..SlideOptions::default()
        };
        let a = gen_synthetic_slide(SpecimenClass::Squamous, &opts, &mut rng_from(3)).unwrap();
        let b = gen_synthetic_slide(SpecimenClass::Squamous, &opts, &mut rng_from(3)).unwrap();
        assert_eq!(a, b);
        assert!(!a.blur.is_empty());
    }
}
