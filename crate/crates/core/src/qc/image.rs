use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// Edge length of a tile at 10X.
pub const TILE_SIZE: usize = 128;

/// Minimum slide edge at 20X.
pub const MIN_SLIDE_EDGE: usize = 256;

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Image(format!(
                "{} pixels cannot fill {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B`.
    pub fn grayscale(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect()
    }

    /// Copy of the `w × h` window at `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> RgbImage {
        let mut pixels = Vec::with_capacity(w * h);
        for r in y..y + h {
            pixels.extend_from_slice(&self.pixels[r * self.width + x..r * self.width + x + w]);
        }
        RgbImage {
            width: w,
            height: h,
            pixels,
        }
    }

    /// 2× box-filter downsample (odd trailing row/column dropped).
    pub fn downsample2(&self) -> RgbImage {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0u32; 3];
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let p = self.get(2 * x + dx, 2 * y + dy);
                    for c in 0..3 {
                        acc[c] += u32::from(p[c]);
                    }
                }
                pixels.push(acc.map(|v| ((v + 2) / 4) as u8));
            }
        }
        RgbImage {
            width: w,
            height: h,
            pixels,
        }
    }
}

/// Separable Gaussian blur with replicated borders. `sigma <= 0` copies.
pub fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let (w, h) = (img.width as isize, img.height as isize);
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;

    let mut tmp = vec![[0.0f64; 3]; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (k, wgt) in kernel.iter().enumerate() {
                let p = img.get(clamp(x + k as isize - radius, w), y as usize);
                for c in 0..3 {
                    acc[c] += wgt * f64::from(p[c]);
                }
            }
            tmp[(y * w + x) as usize] = acc.map(|v| v / norm);
        }
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (k, wgt) in kernel.iter().enumerate() {
                let p = tmp[clamp(y + k as isize - radius, h) * w as usize + x as usize];
                for c in 0..3 {
                    acc[c] += wgt * p[c];
                }
            }
            out.set(x as usize, y as usize, acc.map(|v| (v / norm).round().clamp(0.0, 255.0) as u8));
        }
    }
    out
}

/// A scanned slide at 20X.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideImage {
    pub image: RgbImage,
    pub magnification: String,
    pub microns_per_pixel: f64,
}

impl SlideImage {
    pub fn new(image: RgbImage, magnification: &str, microns_per_pixel: f64) -> Result<Self> {
        if image.width < MIN_SLIDE_EDGE || image.height < MIN_SLIDE_EDGE {
            return Err(Error::Image(format!(
                "slide is {}x{}, both edges must be at least {MIN_SLIDE_EDGE}",
                image.width, image.height
            )));
        }
        if !(microns_per_pixel > 0.0 && microns_per_pixel.is_finite()) {
            return Err(Error::Image(format!("bad pixel size {microns_per_pixel}")));
        }
        Ok(Self {
            image,
            magnification: magnification.to_string(),
            microns_per_pixel,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }
}

/// Binary mask aligned to an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Intersection over union; 1.0 when both are empty.
    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += usize::from(*a && *b);
            union += usize::from(*a || *b);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Fraction of the `w × h` window at `(x, y)` that is set.
    pub fn coverage(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        let mut n = 0usize;
        for r in y..y + h {
            n += self.data[r * self.width + x..r * self.width + x + w]
                .iter()
                .filter(|&&v| v)
                .count();
        }
        n as f64 / (w * h) as f64
    }
}

/// A tile at 10X with its origin in 20X slide coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    pub x: usize,
    pub y: usize,
    pub image: RgbImage,
}

impl Tile {
    pub fn new(image: RgbImage) -> Self {
        Self { x: 0, y: 0, image }
    }
}
