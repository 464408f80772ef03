//! The three-model hierarchy: an upstream suspect-vs-rest model routes each
//! specimen to a masked multi-task suspect subclassifier or to a four-class
//! rest subclassifier.

use std::panic::resume_unwind;

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::calibration::{mc_confidence, McConfig, ThresholdSet, ThresholdTargets};
use crate::data::{SpecimenBag, Split};
use crate::error::{Error, Result};
use crate::mil::{fit, BagModel, Example, HeadSpec, ModelDims, SuspectTask, TaskMask, TrainConfig, TrainingLog};
use crate::qc::RefColorStats;
use crate::rng::{derive, derive_str, rng_from};
use crate::taxonomy::{FinalClass, FinalLabel, Grouping, SpecimenClass};

pub const UPSTREAM_HEAD: &str = "suspect_vs_rest";
pub const REST_HEAD: &str = "rest_subclass";

/// Preprocessing state carried alongside the classifiers. Fine-tuning never
/// touches it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preprocessing {
    pub reference_color: Option<RefColorStats>,
    pub ink_detector: Option<BagModel>,
    pub blur_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdlsModel {
    pub upstream: BagModel,
    pub suspect: BagModel,
    pub rest: BagModel,
    pub thresholds: Option<ThresholdSet>,
    pub mc: McConfig,
    pub preprocessing: Preprocessing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyConfig {
    pub dims: ModelDims,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyLog {
    pub upstream: TrainingLog,
    pub suspect: TrainingLog,
    pub rest: TrainingLog,
}

fn upstream_targets(c: SpecimenClass) -> Vec<Option<usize>> {
    vec![Some(usize::from(c.grouping() == Grouping::Suspect))]
}

fn suspect_targets(c: SpecimenClass) -> Vec<Option<usize>> {
    TaskMask.targets(c.label_group()).to_vec()
}

fn rest_targets(c: SpecimenClass) -> Option<Vec<Option<usize>>> {
    c.rest_index().map(|i| vec![Some(i)])
}

fn examples<'a>(
    bags: &[&'a SpecimenBag],
    targets: impl Fn(SpecimenClass) -> Option<Vec<Option<usize>>>,
) -> Vec<Example<'a>> {
    bags.iter()
        .filter_map(|b| {
            targets(b.label).map(|targets| Example {
                tiles: &b.tiles,
                targets,
            })
        })
        .collect()
}

fn fresh_models(dims: &ModelDims, seed: u64) -> Result<(BagModel, BagModel, BagModel)> {
    let upstream = BagModel::new(dims, &[HeadSpec::new(UPSTREAM_HEAD, 2)], derive(seed, 1))?;
    let heads: Vec<HeadSpec> = SuspectTask::ALL.iter().map(|t| HeadSpec::new(t.name(), 2)).collect();
    let suspect = BagModel::new(dims, &heads, derive(seed, 2))?;
    let rest = BagModel::new(dims, &[HeadSpec::new(REST_HEAD, 4)], derive(seed, 3))?;
    Ok((upstream, suspect, rest))
}

/// Train all three members on the same train/validation bags, concurrently.
fn fit_all(
    models: (&BagModel, &BagModel, &BagModel),
    train: &[&SpecimenBag],
    val: &[&SpecimenBag],
    config: &TrainConfig,
) -> Result<(BagModel, BagModel, BagModel, HierarchyLog)> {
    let cfg = |k: u64| TrainConfig {
        seed: derive(config.seed, k),
        ..config.clone()
    };
    let (c1, c2, c3) = (cfg(11), cfg(12), cfg(13));
    let (up, sus, rest) = std::thread::scope(|s| {
        let up = s.spawn(|| {
            let tr = examples(train, |c| Some(upstream_targets(c)));
            let va = examples(val, |c| Some(upstream_targets(c)));
            fit(models.0, &tr, &va, &c1)
        });
        let sus = s.spawn(|| {
            let tr = examples(train, |c| Some(suspect_targets(c)));
            let va = examples(val, |c| Some(suspect_targets(c)));
            fit(models.1, &tr, &va, &c2)
        });
        let rest = s.spawn(|| {
            let tr = examples(train, rest_targets);
            let va = examples(val, rest_targets);
            fit(models.2, &tr, &va, &c3)
        });
        let join = |h: std::thread::ScopedJoinHandle<'_, _>| h.join().unwrap_or_else(|e| resume_unwind(e));
        (join(up), join(sus), join(rest))
    });
    let (up, up_log) = up?;
    let (sus, sus_log) = sus?;
    let (rest, rest_log) = rest?;
    Ok((
        up,
        sus,
        rest,
        HierarchyLog {
            upstream: up_log,
            suspect: sus_log,
            rest: rest_log,
        },
    ))
}

/// Train the hierarchy on the `train` split, selecting on `val`. The result
/// has no thresholds; see [`calibrate`].
pub fn train_hierarchy(
    bags: &[SpecimenBag],
    config: &HierarchyConfig,
    mc: &McConfig,
) -> Result<(PdlsModel, HierarchyLog)> {
    let train: Vec<&SpecimenBag> = bags.iter().filter(|b| b.split == Split::Train).collect();
    let val: Vec<&SpecimenBag> = bags.iter().filter(|b| b.split == Split::Val).collect();
    if train.is_empty() {
        return Err(Error::EmptySplit("training".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("validation".into()));
    }
    for class in SpecimenClass::ALL {
        if !train.iter().any(|b| b.label == class) {
            return Err(Error::DegenerateLabels(format!("no training specimens of class {class}")));
        }
    }
    for b in &train {
        if b.dim() != config.dims.embed_dim {
            return Err(Error::Shape(format!(
                "specimen {} has {}-wide embeddings, model expects {}",
                b.specimen_id,
                b.dim(),
                config.dims.embed_dim
            )));
        }
    }
    let (up, sus, rest) = fresh_models(&config.dims, config.train.seed)?;
    info!(
        "training hierarchy on {} bags ({} validation)",
        train.len(),
        val.len()
    );
    let (upstream, suspect, rest, log) = fit_all((&up, &sus, &rest), &train, &val, &config.train)?;
    Ok((
        PdlsModel {
            upstream,
            suspect,
            rest,
            thresholds: None,
            mc: mc.clone(),
            preprocessing: Preprocessing::default(),
        },
        log,
    ))
}

/// Raw Monte Carlo confidences behind one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecimenConfidences {
    /// (suspect, rest) from the upstream model.
    pub upstream: [f64; 2],
    /// High-risk probability of the High-vs-Intermediate head.
    pub high_vs_int: f64,
    /// High-risk probability of the High-vs-Rest head.
    pub high: f64,
    /// Intermediate probability of the Intermediate-vs-Rest head.
    pub int: f64,
    /// Rest subclassifier, in [`SpecimenClass::REST`] order.
    pub rest: [f64; 4],
}

impl SpecimenConfidences {
    pub fn suspect(&self) -> f64 {
        self.upstream[0]
    }

    /// Suspect-branch winner: High unless Intermediate is strictly more confident.
    pub fn suspect_choice(&self) -> (SpecimenClass, f64) {
        if self.high >= self.int {
            (SpecimenClass::MelanocyticHighRisk, self.high)
        } else {
            (SpecimenClass::MelanocyticIntermediateRisk, self.int)
        }
    }

    /// Rest-branch argmax; the earliest class wins ties.
    pub fn rest_choice(&self) -> (SpecimenClass, f64) {
        let mut best = 0;
        for i in 1..4 {
            if self.rest[i] > self.rest[best] {
                best = i;
            }
        }
        (SpecimenClass::REST[best], self.rest[best])
    }

    /// Branch and class before any thresholding.
    pub fn raw_prediction(&self) -> (Grouping, SpecimenClass, f64) {
        match route(self.upstream[0], self.upstream[1]) {
            Grouping::Suspect => {
                let (c, p) = self.suspect_choice();
                (Grouping::Suspect, c, p)
            }
            Grouping::Rest => {
                let (c, p) = self.rest_choice();
                (Grouping::Rest, c, p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub specimen_id: String,
    pub branch: Grouping,
    pub confidences: SpecimenConfidences,
    pub final_label: FinalLabel,
    pub upstream_suspect_confidence: f64,
}

/// Branch choice from upstream confidences; ties go to the suspect branch.
pub fn route(suspect: f64, rest: f64) -> Grouping {
    if suspect >= rest {
        Grouping::Suspect
    } else {
        Grouping::Rest
    }
}

/// Apply the routing and threshold rules to recorded confidences.
pub fn decide(conf: &SpecimenConfidences, thresholds: &ThresholdSet) -> (Grouping, FinalLabel) {
    let (branch, class, p) = conf.raw_prediction();
    let label = match (branch, class) {
        (Grouping::Suspect, SpecimenClass::MelanocyticHighRisk) => {
            let ok = thresholds.accuracy_for(class).passes(p) && thresholds.ppv_high.passes(p);
            FinalLabel::confident(if ok {
                FinalClass::Class(class)
            } else {
                FinalClass::MelanocyticSuspect
            })
        }
        (Grouping::Suspect, _) => FinalLabel::confident(if thresholds.accuracy_for(class).passes(p) {
            FinalClass::Class(class)
        } else {
            FinalClass::MelanocyticSuspect
        }),
        (Grouping::Rest, _) => FinalLabel {
            class: FinalClass::Class(class),
            low_confidence: !thresholds.accuracy_for(class).passes(p),
        },
    };
    (branch, label)
}

/// Monte Carlo confidences of all three members for one bag. Seeds derive
/// from the specimen id, so results do not depend on processing order.
pub fn infer_confidences(model: &PdlsModel, bag: &SpecimenBag) -> Result<SpecimenConfidences> {
    let mc = &model.mc;
    let base = derive_str(mc.seed, &bag.specimen_id);
    let run = |m: &BagModel, k: u64| mc_confidence(m, &bag.tiles, mc.passes, mc.dropout, derive(base, k));
    let up = run(&model.upstream, 1)?;
    let sus = run(&model.suspect, 2)?;
    let rest = run(&model.rest, 3)?;
    let r = &rest.heads[0];
    Ok(SpecimenConfidences {
        upstream: [up.heads[0][1], up.heads[0][0]],
        high_vs_int: sus.heads[SuspectTask::HighVsInt.index()][1],
        high: sus.heads[SuspectTask::HighVsRest.index()][1],
        int: sus.heads[SuspectTask::IntVsRest.index()][1],
        rest: [r[0], r[1], r[2], r[3]],
    })
}

pub fn infer_specimen(model: &PdlsModel, bag: &SpecimenBag) -> Result<Prediction> {
    let thresholds = model.thresholds.as_ref().ok_or(Error::MissingThresholds)?;
    let confidences = infer_confidences(model, bag)?;
    let (branch, final_label) = decide(&confidences, thresholds);
    Ok(Prediction {
        specimen_id: bag.specimen_id.clone(),
        branch,
        confidences,
        final_label,
        upstream_suspect_confidence: confidences.suspect(),
    })
}

/// Predictions for many bags, in input order.
pub fn infer_all(model: &PdlsModel, bags: &[&SpecimenBag]) -> Result<Vec<Prediction>> {
    if model.thresholds.is_none() {
        return Err(Error::MissingThresholds);
    }
    bags.par_iter().map(|b| infer_specimen(model, b)).collect()
}

/// Thresholds from the validation bags' raw predictions.
pub fn calibrate_all(
    model: &PdlsModel,
    validation: &[&SpecimenBag],
    targets: &ThresholdTargets,
) -> Result<ThresholdSet> {
    if validation.is_empty() {
        return Err(Error::EmptySplit("validation".into()));
    }
    let raw: Vec<(f64, SpecimenClass, SpecimenClass)> = validation
        .par_iter()
        .map(|b| {
            let (_, class, p) = infer_confidences(model, b)?.raw_prediction();
            Ok((p, class, b.label))
        })
        .collect::<Result<_>>()?;
    ThresholdSet::calibrate(&raw, targets)
}

/// Copy of `model` with thresholds calibrated on `validation`.
pub fn calibrate(
    model: &PdlsModel,
    validation: &[&SpecimenBag],
    targets: &ThresholdTargets,
) -> Result<PdlsModel> {
    let thresholds = calibrate_all(model, validation, targets)?;
    Ok(PdlsModel {
        thresholds: Some(thresholds),
        ..model.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub train: TrainConfig,
    pub targets: ThresholdTargets,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            n_train: 210,
            n_val: 45,
            train: TrainConfig::default(),
            targets: ThresholdTargets::default(),
        }
    }
}

/// Class-balanced split of a new lab's calibration set: classes are
/// interleaved round-robin, the first `n_val` go to validation and the next
/// `n_train` to training.
pub fn select_calibration_split<'a>(
    bags: &'a [SpecimenBag],
    n_train: usize,
    n_val: usize,
    seed: u64,
) -> Result<(Vec<&'a SpecimenBag>, Vec<&'a SpecimenBag>)> {
    if bags.is_empty() {
        return Err(Error::EmptySplit("calibration".into()));
    }
    if bags.len() < n_train + n_val {
        return Err(Error::InvalidInput(format!(
            "calibration set has {} specimens, the split needs {}",
            bags.len(),
            n_train + n_val
        )));
    }
    let mut pools: Vec<Vec<&SpecimenBag>> = SpecimenClass::ALL
        .iter()
        .map(|&c| {
            let mut pool: Vec<&SpecimenBag> = bags.iter().filter(|b| b.label == c).collect();
            pool.sort_by(|a, b| a.specimen_id.cmp(&b.specimen_id));
            pool.shuffle(&mut rng_from(derive(seed, c.index() as u64)));
            pool.reverse();
            pool
        })
        .collect();
    let mut order = Vec::with_capacity(bags.len());
    while order.len() < bags.len() {
        for pool in &mut pools {
            if let Some(b) = pool.pop() {
                order.push(b);
            }
        }
    }
    let val = order[..n_val].to_vec();
    let train = order[n_val..n_val + n_train].to_vec();
    Ok((train, val))
}

/// Continue training every member on a new lab's data, then recalibrate
/// thresholds on its validation part. Preprocessing is carried over as is.
pub fn finetune(
    model: &PdlsModel,
    calibration: &[SpecimenBag],
    config: &FinetuneConfig,
) -> Result<(PdlsModel, HierarchyLog)> {
    let (train, val) = select_calibration_split(calibration, config.n_train, config.n_val, config.train.seed)?;
    let (upstream, suspect, rest, log) =
        fit_all((&model.upstream, &model.suspect, &model.rest), &train, &val, &config.train)?;
    let tuned = PdlsModel {
        upstream,
        suspect,
        rest,
        thresholds: None,
        mc: model.mc.clone(),
        preprocessing: model.preprocessing.clone(),
    };
    let tuned = calibrate(&tuned, &val, &config.targets)?;
    Ok((tuned, log))
}
