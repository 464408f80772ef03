//! Run configuration, read from TOML. Every key is optional; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{McConfig, ThresholdTargets};
use crate::error::{Error, Result};
use crate::eval::TriageConfig;
use crate::hierarchy::{FinetuneConfig, HierarchyConfig};
use crate::mil::{ModelDims, TrainConfig};
use crate::nn::AdamConfig;
use crate::rng::derive;
use crate::synth::{ReviewerKernel, SynthParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Base seed for every stage. Default 7.
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainSection,
    pub mc: McSection,
    pub thresholds: ThresholdSection,
    pub synth: SynthSection,
    pub qc: QcSection,
    pub triage: TriageSection,
    pub ablation: AblationSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DataConfig::default(),
            train: TrainSection::default(),
            mc: McSection::default(),
            thresholds: ThresholdSection::default(),
            synth: SynthSection::default(),
            qc: QcSection::default(),
            triage: TriageSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

/// Input locations. Relative paths are taken from the config file's
/// directory; unset paths fall back to the standard names in the output
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Default `manifest.csv`.
    pub manifest: Option<PathBuf>,
    /// Default `embeddings.bin`.
    pub embeddings: Option<PathBuf>,
    /// Slide list for `qc`; default `slides.csv`.
    pub slides: Option<PathBuf>,
    /// New-lab dataset for `finetune`; default `calibration_manifest.csv`.
    pub calibration_manifest: Option<PathBuf>,
    /// Default `calibration_embeddings.bin`.
    pub calibration_embeddings: Option<PathBuf>,
    /// Default `model.pdls`.
    pub model: Option<PathBuf>,
    /// Preprocessing models from `qc`; default `preprocessing.pdls`.
    pub preprocessing: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// `"desk"` (64, 64, 32, 32; attention 16) or `"full"` (1024, 1024,
    /// 512, 512; attention 256). Default `"desk"`.
    pub dims: String,
    /// Overrides the preset's encoder widths.
    pub encoder: Option<Vec<usize>>,
    /// Overrides the preset's attention width.
    pub attention_dim: Option<usize>,
    /// Default 100.
    pub max_epochs: usize,
    /// Default 10.
    pub patience: usize,
    /// Default 1e-4.
    pub learning_rate: f64,
    /// Default 0.9.
    pub beta1: f64,
    /// Default 0.999.
    pub beta2: f64,
    /// Default 1e-8.
    pub epsilon: f64,
    /// Default 0.5.
    pub dropout: f64,
    /// Bags per optimizer step. Default 1.
    pub batch_bags: usize,
    /// Fine-tuning training bags. Default 210.
    pub finetune_train: usize,
    /// Fine-tuning validation bags. Default 45.
    pub finetune_val: usize,
    /// Fine-tuning epoch cap; default `max_epochs`.
    pub finetune_epochs: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let f = FinetuneConfig::default();
        Self {
            dims: "desk".into(),
            encoder: None,
            attention_dim: None,
            max_epochs: t.max_epochs,
            patience: t.patience,
            learning_rate: t.adam.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.epsilon,
            dropout: t.dropout,
            batch_bags: t.batch_bags,
            finetune_train: f.n_train,
            finetune_val: f.n_val,
            finetune_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    /// Monte Carlo passes T. Default 100.
    pub passes: usize,
    /// Default 0.5.
    pub dropout: f64,
}

impl Default for McSection {
    fn default() -> Self {
        let m = McConfig::default();
        Self {
            passes: m.passes,
            dropout: m.dropout,
        }
    }
}

/// A single value or one value per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerClass {
    All(f64),
    Each([f64; 6]),
}

impl PerClass {
    pub fn values(self) -> [f64; 6] {
        match self {
            PerClass::All(v) => [v; 6],
            PerClass::Each(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSection {
    /// Target accuracy, per class in taxonomy order or one value.
    /// Default 0.9.
    pub accuracy: PerClass,
    /// Target High-Risk PPV. Default 0.6.
    pub ppv_high: f64,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        let t = ThresholdTargets::default();
        Self {
            accuracy: PerClass::Each(t.accuracy),
            ppv_high: t.ppv_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Embedding width. Default 128.
    pub dim: usize,
    /// Specimens per class. Default 200.
    pub per_class: usize,
    /// Train/validation/test fractions. Default [0.7, 0.15, 0.15].
    pub split: [f64; 3],
    /// Melanocytic prototype spacing. Default 0.6.
    pub delta: f64,
    /// Tile noise norm. Default 0.5.
    pub sigma: f64,
    /// Default 20.
    pub min_tiles: usize,
    /// Default 200.
    pub max_tiles: usize,
    /// Default 0.05.
    pub min_diagnostic_fraction: f64,
    /// Default 0.4.
    pub max_diagnostic_fraction: f64,
    /// Default `"reference"`.
    pub lab_id: String,
    /// Simulate the review panel and keep consensus specimens only.
    /// Default false.
    pub consensus: bool,
    /// Uniform reviewer accuracy; unset uses the standard kernel.
    pub kernel_diagonal: Option<f64>,
    /// Specimens per class for a shifted second lab (0 = none). Default 0.
    pub shifted_per_class: usize,
    /// Default 0.3.
    pub shift_mix: f64,
    /// Default 0.5.
    pub shift_offset: f64,
    /// Synthetic slide images per class (0 = none). Default 0.
    pub slides_per_class: usize,
    /// Slide edge in pixels. Default 1024.
    pub slide_size: usize,
    /// Fraction of slides with an ink mark. Default 0.25.
    pub ink_fraction: f64,
    /// Fraction of slides with a blurred region. Default 0.25.
    pub blur_fraction: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let p = SynthParams::default();
        Self {
            dim: p.dim,
            per_class: p.per_class,
            split: p.split,
            delta: p.delta,
            sigma: p.sigma,
            min_tiles: p.min_tiles,
            max_tiles: p.max_tiles,
            min_diagnostic_fraction: p.min_diagnostic_fraction,
            max_diagnostic_fraction: p.max_diagnostic_fraction,
            lab_id: p.lab_id,
            consensus: false,
            kernel_diagonal: None,
            shifted_per_class: 0,
            shift_mix: 0.3,
            shift_offset: 0.5,
            slides_per_class: 0,
            slide_size: 1024,
            ink_fraction: 0.25,
            blur_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QcSection {
    /// Laplacian-variance cutoff; unset calibrates from the input tiles
    /// (5th percentile).
    pub blur_threshold: Option<f64>,
    /// Train an ink detector on synthetic slides and filter with it.
    /// Default true.
    pub ink_detector: bool,
    /// Synthetic slides per ink class used to train the detector. Default 24.
    pub ink_training_slides: usize,
    /// Default 0.5.
    pub ink_cutoff: f64,
    /// Adapt tile colours to the input set's statistics. Default true.
    pub color_adaptation: bool,
    /// Tile embedding width. Default 1024.
    pub embed_dim: usize,
}

impl Default for QcSection {
    fn default() -> Self {
        Self {
            blur_threshold: None,
            ink_detector: true,
            ink_training_slides: 24,
            ink_cutoff: crate::qc::DEFAULT_INK_CUTOFF,
            color_adaptation: true,
            embed_dim: crate::qc::EMBED_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriageSection {
    /// Bootstrap caseloads S. Default 1000.
    pub simulations: usize,
    /// Cases per caseload; unset uses the test-pool size.
    pub caseload: Option<usize>,
    /// Grid intervals on the reviewed fraction. Default 100.
    pub grid_steps: usize,
}

impl Default for TriageSection {
    fn default() -> Self {
        let t = TriageConfig::default();
        Self {
            simulations: t.simulations,
            caseload: t.caseload,
            grid_steps: t.grid_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    /// Training seeds. Default [1, 2, 3, 4, 5].
    pub seeds: Vec<u64>,
    /// Epoch cap per variant; default `train.max_epochs`.
    pub max_epochs: Option<usize>,
    /// Learning rate per variant; default `train.learning_rate`.
    pub learning_rate: Option<f64>,
    /// Monte Carlo passes; default `mc.passes`.
    pub mc_passes: Option<usize>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            seeds: (1..=5).collect(),
            max_epochs: None,
            learning_rate: None,
            mc_passes: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_params().validate()?;
        self.model_dims()?.validate()?;
        self.targets().validate()?;
        self.kernel()?;
        let t = &self.train;
        if t.max_epochs == 0 || t.batch_bags == 0 || t.learning_rate <= 0.0 {
            return Err(Error::Config("train needs max_epochs, batch_bags and learning_rate > 0".into()));
        }
        for (name, p) in [("train.dropout", t.dropout), ("mc.dropout", self.mc.dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if self.mc.passes == 0 || self.triage.simulations == 0 || self.triage.grid_steps == 0 {
            return Err(Error::Config("mc.passes, triage.simulations and triage.grid_steps must be positive".into()));
        }
        let s = &self.synth;
        for (name, f) in [("synth.ink_fraction", s.ink_fraction), ("synth.blur_fraction", s.blur_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {f}")));
            }
        }
        if self.qc.embed_dim == 0 {
            return Err(Error::Config("qc.embed_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn synth_params(&self) -> SynthParams {
        let s = &self.synth;
        SynthParams {
            dim: s.dim,
            per_class: s.per_class,
            split: s.split,
            delta: s.delta,
            sigma: s.sigma,
            min_tiles: s.min_tiles,
            max_tiles: s.max_tiles,
            min_diagnostic_fraction: s.min_diagnostic_fraction,
            max_diagnostic_fraction: s.max_diagnostic_fraction,
            lab_id: s.lab_id.clone(),
        }
    }

    pub fn kernel(&self) -> Result<ReviewerKernel> {
        match self.synth.kernel_diagonal {
            None => Ok(ReviewerKernel::standard()),
            Some(d) => ReviewerKernel::with_diagonal(d),
        }
    }

    /// Layer widths for bags of width [`SynthSection::dim`]; callers with
    /// other inputs replace `embed_dim`.
    pub fn model_dims(&self) -> Result<ModelDims> {
        let t = &self.train;
        let mut dims = match t.dims.as_str() {
            "desk" => ModelDims::desk(self.synth.dim),
            "full" => ModelDims::full(self.synth.dim),
            other => return Err(Error::Config(format!("train.dims must be \"desk\" or \"full\", got {other:?}"))),
        };
        if let Some(e) = &t.encoder {
            dims.encoder = e.clone();
        }
        if let Some(a) = t.attention_dim {
            dims.attention_dim = a;
        }
        Ok(dims)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            max_epochs: t.max_epochs,
            patience: t.patience,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            dropout: t.dropout,
            batch_bags: t.batch_bags,
            seed: derive(self.seed, 0x5452),
        }
    }

    pub fn hierarchy_config(&self, embed_dim: usize) -> Result<HierarchyConfig> {
        let mut dims = self.model_dims()?;
        dims.embed_dim = embed_dim;
        Ok(HierarchyConfig {
            dims,
            train: self.train_config(),
        })
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig {
            passes: self.mc.passes,
            dropout: self.mc.dropout,
            seed: derive(self.seed, 0x4d43),
        }
    }

    pub fn targets(&self) -> ThresholdTargets {
        ThresholdTargets {
            accuracy: self.thresholds.accuracy.values(),
            ppv_high: self.thresholds.ppv_high,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        let mut train = self.train_config();
        train.seed = derive(self.seed, 0x4654);
        if let Some(e) = self.train.finetune_epochs {
            train.max_epochs = e;
        }
        FinetuneConfig {
            n_train: self.train.finetune_train,
            n_val: self.train.finetune_val,
            train,
            targets: self.targets(),
        }
    }

    pub fn triage_config(&self) -> TriageConfig {
        TriageConfig {
            simulations: self.triage.simulations,
            caseload: self.triage.caseload,
            grid_steps: self.triage.grid_steps,
            seed: derive(self.seed, 0x5453),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.synth_params(), SynthParams::default());
        assert_eq!(c.targets(), ThresholdTargets::default());
        assert_eq!(c.mc_config().passes, 100);
        assert_eq!(c.model_dims().unwrap(), ModelDims::desk(128));
        let t = c.train_config();
        assert_eq!((t.max_epochs, t.patience, t.adam, t.dropout), (100, 10, AdamConfig::default(), 0.5));
        let f = c.finetune_config();
        assert_eq!((f.n_train, f.n_val), (210, 45));
    }

    #[test]
    fn defaults_survive_serialization() {
        let text = toml::to_string(&Config::default()).unwrap();
        assert_eq!(Config::parse(&text).unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sed = 3", "[train]\nepochs = 3", "[mystery]\na = 1", "[mc]\nT = 5"] {
            assert!(matches!(Config::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn scalar_or_per_class_targets() {
        let c = Config::parse("[thresholds]\naccuracy = 0.8\nppv_high = 0.5").unwrap();
        assert_eq!(c.targets(), ThresholdTargets::uniform(0.8, 0.5));
        let c = Config::parse("[thresholds]\naccuracy = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]").unwrap();
        assert_eq!(c.targets().accuracy, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert!(Config::parse("[thresholds]\naccuracy = 1.5").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "[train]\ndims = \"huge\"",
            "[train]\nencoder = []",
            "[mc]\ndropout = 1.0",
            "[synth]\nsplit = [0.5, 0.5, 0.5]",
            "[synth]\nkernel_diagonal = 1.5",
        ] {
            assert!(Config::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn seed_feeds_every_stage() {
        let a = Config::parse("seed = 1").unwrap();
        let b = Config::parse("seed = 2").unwrap();
        assert_ne!(a.train_config().seed, b.train_config().seed);
        assert_ne!(a.mc_config().seed, b.mc_config().seed);
        assert_ne!(a.triage_config().seed, b.triage_config().seed);
    }
}
