use std::collections::HashSet;

use log::info;

use super::metrics::{confusion_metrics, MetricMode, SUSPECT_ROW};
use crate::calibration::{McConfig, ThresholdTargets};
use crate::data::{SpecimenBag, Split};
use crate::error::{Error, Result};
use crate::hierarchy::{calibrate, infer_all, train_hierarchy, HierarchyConfig};
use crate::synth::ConsensusSets;
use crate::taxonomy::SpecimenClass;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub hierarchy: HierarchyConfig,
    pub mc: McConfig,
    pub targets: ThresholdTargets,
    pub seeds: Vec<u64>,
}

/// Metrics of one trained variant on the shared test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantMetrics {
    /// Per class; suspect-credit for Intermediate/High, strict otherwise.
    pub sensitivity: [f64; 6],
    pub suspect_sensitivity: f64,
    pub high_ppv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSeedResult {
    pub seed: u64,
    pub consensus: VariantMetrics,
    pub non_consensus: VariantMetrics,
}

/// Consensus-trained minus non-consensus-trained, over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<AblationSeedResult>,
    pub sensitivity_delta: [MeanStd; 6],
    pub suspect_sensitivity_delta: MeanStd,
    pub high_ppv_delta: MeanStd,
}

/// Training pools and the shared test set for the consensus ablation. The
/// test set holds only consensus-labeled test-split specimens; the
/// non-consensus variant adds the excluded specimens under their first
/// review to the consensus pool.
pub fn ablation_datasets(sets: &ConsensusSets) -> (Vec<SpecimenBag>, Vec<SpecimenBag>, Vec<SpecimenBag>) {
    let test: Vec<SpecimenBag> = sets.consensus.iter().filter(|b| b.split == Split::Test).cloned().collect();
    let consensus: Vec<SpecimenBag> = sets.consensus.iter().filter(|b| b.split != Split::Test).cloned().collect();
    let mut non_consensus = consensus.clone();
    non_consensus.extend(sets.non_consensus.iter().filter(|b| b.split != Split::Test).cloned());
    (consensus, non_consensus, test)
}

fn check_leakage(train: &[SpecimenBag], test: &[SpecimenBag], variant: &str) -> Result<()> {
    let ids: HashSet<&str> = train.iter().map(|b| b.specimen_id.as_str()).collect();
    if let Some(b) = test.iter().find(|b| ids.contains(b.specimen_id.as_str())) {
        return Err(Error::Leakage(format!(
            "test specimen {} is also in the {variant} training data",
            b.specimen_id
        )));
    }
    Ok(())
}

fn evaluate_variant(
    bags: &[SpecimenBag],
    test: &[SpecimenBag],
    config: &AblationConfig,
    seed: u64,
) -> Result<VariantMetrics> {
    let mut hierarchy = config.hierarchy.clone();
    hierarchy.train.seed = seed;
    let (model, _) = train_hierarchy(bags, &hierarchy, &config.mc)?;
    let val: Vec<&SpecimenBag> = bags.iter().filter(|b| b.split == Split::Val).collect();
    let model = calibrate(&model, &val, &config.targets)?;
    let test_refs: Vec<&SpecimenBag> = test.iter().collect();
    let preds = infer_all(&model, &test_refs)?;
    let labels: Vec<_> = preds.iter().map(|p| p.final_label).collect();
    let truths: Vec<SpecimenClass> = test.iter().map(|b| b.label).collect();
    let credit = confusion_metrics(&labels, &truths, MetricMode::SuspectCredit)?;
    let strict = confusion_metrics(&labels, &truths, MetricMode::Strict)?;
    let mut sensitivity = [0.0; 6];
    for c in SpecimenClass::ALL {
        sensitivity[c.index()] = if c.label_group() == crate::taxonomy::LabelGroup::Rest {
            strict[c.index()].sensitivity
        } else {
            credit[c.index()].sensitivity
        };
    }
    let suspect = credit.iter().find(|r| r.label == SUSPECT_ROW).expect("suspect row");
    Ok(VariantMetrics {
        sensitivity,
        suspect_sensitivity: suspect.sensitivity,
        high_ppv: strict[SpecimenClass::MelanocyticHighRisk.index()].ppv,
    })
}

/// Train a consensus-only and a consensus-plus-excluded hierarchy for every
/// seed and compare them on a common consensus test set. Each variant
/// selects and calibrates on its own validation split.
pub fn ablation_run(
    consensus: &[SpecimenBag],
    non_consensus: &[SpecimenBag],
    test: &[SpecimenBag],
    config: &AblationConfig,
) -> Result<AblationReport> {
    if config.seeds.is_empty() {
        return Err(Error::InvalidInput("ablation needs at least one seed".into()));
    }
    if test.is_empty() {
        return Err(Error::EmptySplit("test".into()));
    }
    check_leakage(consensus, test, "consensus")?;
    check_leakage(non_consensus, test, "non-consensus")?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        info!("ablation seed {seed}");
        runs.push(AblationSeedResult {
            seed,
            consensus: evaluate_variant(consensus, test, config, seed)?,
            non_consensus: evaluate_variant(non_consensus, test, config, seed)?,
        });
    }
    let delta = |f: &dyn Fn(&VariantMetrics) -> f64| {
        MeanStd::of(&runs.iter().map(|r| f(&r.consensus) - f(&r.non_consensus)).collect::<Vec<_>>())
    };
    let sensitivity_delta = std::array::from_fn(|i| delta(&|m| m.sensitivity[i]));
    Ok(AblationReport {
        sensitivity_delta,
        suspect_sensitivity_delta: delta(&|m| m.suspect_sensitivity),
        high_ppv_delta: delta(&|m| m.high_ppv),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mil::{ModelDims, TrainConfig};
    use crate::nn::Matrix;

    fn bag(id: &str, split: Split) -> SpecimenBag {
        SpecimenBag {
            specimen_id: id.into(),
            lab_id: "lab".into(),
            label: SpecimenClass::Other,
            diagnosis: "Other Diagnoses".into(),
            split,
            tiles: Matrix::zeros(1, 2),
            diagnostic_tiles: vec![],
        }
    }

    fn config() -> AblationConfig {
        AblationConfig {
            hierarchy: HierarchyConfig {
                dims: ModelDims::reduced(),
                train: TrainConfig::default(),
            },
            mc: McConfig::default(),
            targets: ThresholdTargets::default(),
            seeds: vec![1],
        }
    }

    #[test]
    fn leaked_specimen_is_rejected() {
        let train = vec![bag("a", Split::Train), bag("b", Split::Val)];
        let test = vec![bag("c", Split::Test), bag("a", Split::Test)];
        match ablation_run(&train, &[], &test, &config()) {
            Err(Error::Leakage(msg)) => assert!(msg.contains("a")),
            other => panic!("{other:?}"),
        }
        match ablation_run(&[], &train, &test, &config()) {
            Err(Error::Leakage(msg)) => assert!(msg.contains("non-consensus")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn datasets_share_consensus_test() {
        let sets = ConsensusSets {
            consensus: vec![bag("a", Split::Train), bag("t", Split::Test)],
            non_consensus: vec![bag("x", Split::Train), bag("y", Split::Test)],
        };
        let (c, n, t) = ablation_datasets(&sets);
        let ids = |v: &[SpecimenBag]| v.iter().map(|b| b.specimen_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&c), ["a"]);
        assert_eq!(ids(&n), ["a", "x"]);
        assert_eq!(ids(&t), ["t"]);
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }
}
