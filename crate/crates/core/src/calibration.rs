//! Monte Carlo dropout confidences and validation-set confidence thresholds.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mil::BagModel;
use crate::nn::{DropoutSpec, Matrix};
use crate::rng::rng_from;
use crate::taxonomy::SpecimenClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    /// Stochastic passes per specimen.
    pub passes: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            passes: 100,
            dropout: 0.5,
            seed: 0,
        }
    }
}

/// Mean per-head probabilities over the Monte Carlo passes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceVector {
    pub heads: Vec<Vec<f64>>,
    pub passes: usize,
    pub seed: u64,
}

/// Average `passes` dropout-sampled forward passes. The encoder prefix before
/// the first dropout layer is evaluated once and shared.
pub fn mc_confidence(
    model: &BagModel,
    tiles: &Matrix,
    passes: usize,
    dropout: f64,
    seed: u64,
) -> Result<ConfidenceVector> {
    if passes == 0 {
        return Err(Error::InvalidInput("Monte Carlo sampling needs T >= 1".into()));
    }
    let spec = DropoutSpec::mc_sample(dropout);
    spec.validate()?;
    let prefix = model.prefix(tiles)?;
    let mut rng = rng_from(seed);
    let mut sums: Vec<Vec<f64>> = model.heads.iter().map(|h| vec![0.0; h.classes()]).collect();
    for _ in 0..passes {
        let probs = model.sample_probs(&prefix, &spec, &mut rng)?;
        for (s, p) in sums.iter_mut().zip(probs) {
            s.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
    }
    let t = passes as f64;
    for s in &mut sums {
        s.iter_mut().for_each(|v| *v /= t);
    }
    Ok(ConfidenceVector {
        heads: sums,
        passes,
        seed,
    })
}

/// Candidate thresholds: 0 and every observed confidence, ascending.
fn candidates(confidences: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut c: Vec<f64> = std::iter::once(0.0).chain(confidences).collect();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

/// Smallest candidate threshold whose retained set (confidence ≥ threshold)
/// is nonempty and at least `target` correct.
fn smallest_passing(scored: &[(f64, bool)], target: f64) -> Option<f64> {
    if scored.is_empty() {
        return None;
    }
    let mut desc: Vec<(f64, bool)> = scored.to_vec();
    desc.sort_by(|a, b| b.0.total_cmp(&a.0));
    let cands = candidates(scored.iter().map(|s| s.0));
    // walk candidates from the top, growing the retained set
    let mut passing = None;
    let (mut kept, mut correct, mut k) = (0usize, 0usize, 0usize);
    for &c in cands.iter().rev() {
        while k < desc.len() && desc[k].0 >= c {
            kept += 1;
            correct += usize::from(desc[k].1);
            k += 1;
        }
        if kept > 0 && correct as f64 / kept as f64 >= target {
            passing = Some(c);
        }
    }
    passing
}

/// Accuracy threshold for one predicted class. Each entry is
/// `(confidence, predicted, truth)`; entries predicting other classes are
/// ignored. `None` when the target cannot be met.
pub fn calibrate_accuracy_threshold(
    predictions: &[(f64, SpecimenClass, SpecimenClass)],
    class: SpecimenClass,
    target_accuracy: f64,
) -> Option<f64> {
    let scored: Vec<(f64, bool)> = predictions
        .iter()
        .filter(|p| p.1 == class)
        .map(|&(c, _, t)| (c, t == class))
        .collect();
    if scored.is_empty() {
        warn!("no validation predictions for {class}; accuracy threshold unavailable");
    }
    smallest_passing(&scored, target_accuracy)
}

/// PPV threshold over High-risk predictions given as `(confidence, truth)`.
pub fn calibrate_ppv_threshold(
    predictions: &[(f64, SpecimenClass)],
    target_ppv: f64,
) -> Option<f64> {
    let scored: Vec<(f64, bool)> = predictions
        .iter()
        .map(|&(c, t)| (c, t == SpecimenClass::MelanocyticHighRisk))
        .collect();
    if scored.is_empty() {
        warn!("no validation High-risk predictions; PPV threshold unavailable");
    }
    smallest_passing(&scored, target_ppv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// False when the target was unattainable; such a threshold never passes.
    pub attainable: bool,
}

impl Threshold {
    pub fn from_calibration(found: Option<f64>, what: &str) -> Self {
        match found {
            Some(value) => Self {
                value,
                attainable: true,
            },
            None => {
                warn!("{what}: target unattainable on the validation set; threshold set to 1.0");
                Self {
                    value: 1.0,
                    attainable: false,
                }
            }
        }
    }

    pub fn passes(&self, confidence: f64) -> bool {
        self.attainable && confidence >= self.value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdTargets {
    /// Per class, indexed by [`SpecimenClass::index`].
    pub accuracy: [f64; 6],
    pub ppv_high: f64,
}

impl Default for ThresholdTargets {
    fn default() -> Self {
        Self {
            accuracy: [0.9; 6],
            ppv_high: 0.6,
        }
    }
}

impl ThresholdTargets {
    pub fn uniform(accuracy: f64, ppv_high: f64) -> Self {
        Self {
            accuracy: [accuracy; 6],
            ppv_high,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .accuracy
            .iter()
            .chain([&self.ppv_high])
            .any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(Error::InvalidInput("threshold targets must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    /// Indexed by [`SpecimenClass::index`].
    pub accuracy: [Threshold; 6],
    pub ppv_high: Threshold,
    pub targets: ThresholdTargets,
}

impl ThresholdSet {
    /// Thresholds that every prediction passes.
    pub fn permissive() -> Self {
        let zero = Threshold {
            value: 0.0,
            attainable: true,
        };
        Self {
            accuracy: [zero; 6],
            ppv_high: zero,
            targets: ThresholdTargets::uniform(0.0, 0.0),
        }
    }

    pub fn accuracy_for(&self, class: SpecimenClass) -> Threshold {
        self.accuracy[class.index()]
    }

    /// Calibrate from per-class validation predictions
    /// `(confidence, predicted, truth)`.
    pub fn calibrate(
        predictions: &[(f64, SpecimenClass, SpecimenClass)],
        targets: &ThresholdTargets,
    ) -> Result<Self> {
        targets.validate()?;
        let accuracy = SpecimenClass::ALL.map(|c| {
            Threshold::from_calibration(
                calibrate_accuracy_threshold(predictions, c, targets.accuracy[c.index()]),
                &format!("accuracy threshold for {c}"),
            )
        });
        let high: Vec<(f64, SpecimenClass)> = predictions
            .iter()
            .filter(|p| p.1 == SpecimenClass::MelanocyticHighRisk)
            .map(|&(c, _, t)| (c, t))
            .collect();
        let ppv_high = Threshold::from_calibration(
            calibrate_ppv_threshold(&high, targets.ppv_high),
            "High-risk PPV threshold",
        );
        Ok(Self {
            accuracy,
            ppv_high,
            targets: targets.clone(),
        })
    }
}
