//! Slide preprocessing: tissue segmentation, tiling, blur and ink filtering,
//! colour adaptation, augmentation and tile embedding.

mod augment;
mod blur;
mod color;
mod embed;
mod image;
mod ink;
mod io;
mod segment;

pub use augment::{augment, rotate90, AugmentParams};
pub use blur::{blur_filter, calibrate_blur_threshold, laplacian_variance, percentile};
pub use color::{adapt_colors, RefColorStats};
pub use embed::{normalized_pixels, Embedder, Projection, EMBED_DIM, PROJECTION_NNZ};
pub use image::{gaussian_blur, Mask, Rgb, RgbImage, SlideImage, Tile, MIN_SLIDE_EDGE, TILE_SIZE};
pub use ink::{
    color_histogram, histogram_matrix, ink_dims, ink_filter, ink_probability, ink_scores, ink_train_config, train_ink_detector,
    DEFAULT_INK_CUTOFF, HISTOGRAM_DIM, INK_HEAD,
};
pub use io::{parse_sidecar, read_slide, sidecar_path, write_slide};
pub use segment::{all_tiles, otsu_threshold, segment_tissue, tile_slide, MIN_TILE_TISSUE, MIN_TISSUE_SATURATION};

use crate::error::Result;
use crate::mil::BagModel;

/// A tile dropped by a QC stage.
#[derive(Debug, Clone, PartialEq)]
pub struct QcRejection {
    /// Position in the stage's input.
    pub index: usize,
    pub x: usize,
    pub y: usize,
    pub reason: &'static str,
    pub score: f64,
}

/// Optional stages of the per-slide pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct QcSettings<'a> {
    pub ink_detector: Option<&'a BagModel>,
    pub ink_cutoff: Option<f64>,
    pub blur_threshold: Option<f64>,
    pub reference_color: Option<&'a RefColorStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcOutcome {
    pub tiles: Vec<Tile>,
    pub rejected: Vec<QcRejection>,
    /// Tissue tiles before filtering.
    pub candidates: usize,
}

/// Segment, tile, then ink filter, blur filter and colour adaptation.
/// Surviving tiles keep their relative order.
pub fn process_slide(slide: &SlideImage, settings: &QcSettings<'_>) -> Result<QcOutcome> {
    let mask = segment_tissue(slide);
    let mut tiles = tile_slide(slide, &mask);
    let candidates = tiles.len();
    let mut rejected = Vec::new();
    if let Some(model) = settings.ink_detector {
        let (kept, rej) = ink_filter(tiles, model, settings.ink_cutoff.unwrap_or(DEFAULT_INK_CUTOFF))?;
        tiles = kept;
        rejected.extend(rej);
    }
    if let Some(t) = settings.blur_threshold {
        let (kept, rej) = blur_filter(tiles, t)?;
        tiles = kept;
        rejected.extend(rej);
    }
    if let Some(reference) = settings.reference_color {
        tiles = adapt_colors(&tiles, reference)?;
    }
    Ok(QcOutcome {
        tiles,
        rejected,
        candidates,
    })
}
