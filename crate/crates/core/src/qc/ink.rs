use super::image::{RgbImage, SlideImage, Tile};
use super::segment::all_tiles;
use super::QcRejection;
use crate::error::{Error, Result};
use crate::mil::{fit, BagModel, Example, HeadSpec, ModelDims, TrainConfig};
use crate::nn::{AdamConfig, Matrix};

pub const HISTOGRAM_BINS: usize = 8;
pub const HISTOGRAM_DIM: usize = HISTOGRAM_BINS * HISTOGRAM_BINS * HISTOGRAM_BINS;
pub const INK_HEAD: &str = "ink";
pub const DEFAULT_INK_CUTOFF: f64 = 0.5;

/// Normalized 8×8×8 RGB histogram.
pub fn color_histogram(img: &RgbImage) -> Vec<f64> {
    let mut h = vec![0.0; HISTOGRAM_DIM];
    let shift = 8 - HISTOGRAM_BINS.trailing_zeros();
    for p in &img.pixels {
        let [r, g, b] = p.map(|c| (c >> shift) as usize);
        h[(r * HISTOGRAM_BINS + g) * HISTOGRAM_BINS + b] += 1.0;
    }
    let n = img.pixels.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Square-rooted histograms, one row per tile. The root lifts sparse bins
/// such as thin pen strokes to a scale the detector can learn from.
pub fn histogram_matrix(tiles: &[Tile]) -> Matrix {
    let rows: Vec<Vec<f64>> = tiles
        .iter()
        .map(|t| color_histogram(&t.image).into_iter().map(f64::sqrt).collect())
        .collect();
    if rows.is_empty() {
        return Matrix::zeros(0, HISTOGRAM_DIM);
    }
    Matrix::from_rows(&rows).expect("fixed width")
}

pub fn ink_dims() -> ModelDims {
    ModelDims {
        embed_dim: HISTOGRAM_DIM,
        encoder: vec![32, 16],
        attention_dim: 8,
    }
}

/// Default detector training: small data, so a higher rate and more epochs
/// than the main classifiers.
pub fn ink_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 60,
        adam: AdamConfig {
            learning_rate: 3e-3,
            ..AdamConfig::default()
        },
        seed,
        ..TrainConfig::default()
    }
}

fn examples(v: &[(Matrix, usize)]) -> Vec<Example<'_>> {
    v.iter()
        .map(|(m, y)| Example {
            tiles: m,
            targets: vec![Some(*y)],
        })
        .collect()
}

/// Train the slide-level ink detector. Every slide contributes all of its
/// grid tiles, so strokes outside tissue still count.
pub fn train_ink_detector(
    train: &[(&SlideImage, bool)],
    val: &[(&SlideImage, bool)],
    config: &TrainConfig,
) -> Result<BagModel> {
    let has = |set: &[(&SlideImage, bool)], v: bool| set.iter().any(|s| s.1 == v);
    if !has(train, true) || !has(train, false) {
        return Err(Error::DegenerateLabels("ink training needs inked and clean slides".into()));
    }
    let feats = |set: &[(&SlideImage, bool)]| -> Vec<(Matrix, usize)> {
        set.iter()
            .map(|(s, ink)| (histogram_matrix(&all_tiles(s)), usize::from(*ink)))
            .collect()
    };
    let tr = feats(train);
    let va = feats(val);
    let model = BagModel::new(&ink_dims(), &[HeadSpec::new(INK_HEAD, 2)], config.seed)?;
    let val_examples = examples(&va);
    let val_examples = if val_examples.is_empty() { examples(&tr) } else { val_examples };
    let (model, _) = fit(&model, &examples(&tr), &val_examples, config)?;
    Ok(model)
}

/// Slide-level ink probability.
pub fn ink_probability(model: &BagModel, slide: &SlideImage) -> Result<f64> {
    let m = histogram_matrix(&all_tiles(slide));
    Ok(model.forward(&m, &crate::nn::DropoutSpec::off(), 0)?.probs[0][1])
}

/// Per-tile ink scores: each tile's encoding through the ink head.
pub fn ink_scores(model: &BagModel, tiles: &[Tile]) -> Result<Vec<f64>> {
    if tiles.is_empty() {
        return Ok(Vec::new());
    }
    Ok(model
        .tile_probs(&histogram_matrix(tiles), 0)?
        .into_iter()
        .map(|p| p[1])
        .collect())
}

/// Drop tiles whose ink score exceeds `cutoff`, preserving order.
pub fn ink_filter(tiles: Vec<Tile>, model: &BagModel, cutoff: f64) -> Result<(Vec<Tile>, Vec<QcRejection>)> {
    let scores = ink_scores(model, &tiles)?;
    let mut kept = Vec::with_capacity(tiles.len());
    let mut rejected = Vec::new();
    for (i, (t, s)) in tiles.into_iter().zip(scores).enumerate() {
        if s > cutoff {
            rejected.push(QcRejection {
                index: i,
                x: t.x,
                y: t.y,
                reason: "ink",
                score: s,
            });
        } else {
            kept.push(t);
        }
    }
    Ok((kept, rejected))
}
