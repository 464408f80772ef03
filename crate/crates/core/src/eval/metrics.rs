use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::SpecimenConfidences;
use crate::taxonomy::{Diagnosis, FinalClass, FinalLabel, LabelGroup, SpecimenClass, DIAGNOSES};

/// ROC curve from a threshold sweep over the observed scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

fn check_binary(scores: &[f64], labels: &[bool], what: &str) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc(what.to_string()));
    }
    Ok((pos, neg))
}

/// Probability that a positive outranks a negative, ties counting one half.
/// Computed from midranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels, "scores")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps midranks integral.
    let mut rank2_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k] {
                rank2_sum += midrank2;
            }
        }
        i = j + 1;
    }
    let u2 = rank2_sum - (pos * (pos + 1)) as u64;
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let auc = roc_auc(scores, labels)?;
    let (pos, neg) = check_binary(scores, labels, "scores")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve { points, auc })
}

/// One-vs-rest curve for every class. A class without positives or without
/// negatives yields an undefined-AUC error in its slot.
pub fn roc_auc_ovr(scores: &[[f64; 6]], labels: &[SpecimenClass]) -> Result<Vec<(SpecimenClass, Result<RocCurve>)>> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(SpecimenClass::ALL
        .iter()
        .map(|&c| {
            let s: Vec<f64> = scores.iter().map(|r| r[c.index()]).collect();
            let l: Vec<bool> = labels.iter().map(|&t| t == c).collect();
            let curve = roc_curve(&s, &l).map_err(|e| match e {
                Error::UndefinedAuc(_) => Error::UndefinedAuc(c.code().to_string()),
                other => other,
            });
            (c, curve)
        })
        .collect())
}

/// Hierarchical per-class scores: suspect classes split the upstream suspect
/// mass by the High-vs-Intermediate head, rest classes split the remaining
/// mass by the rest subclassifier. The six scores sum to one.
pub fn class_scores(conf: &SpecimenConfidences) -> [f64; 6] {
    let s = conf.upstream[0];
    let r = 1.0 - s;
    let mut out = [0.0; 6];
    out[SpecimenClass::MelanocyticHighRisk.index()] = s * conf.high_vs_int;
    out[SpecimenClass::MelanocyticIntermediateRisk.index()] = s * (1.0 - conf.high_vs_int);
    for (k, c) in SpecimenClass::REST.iter().enumerate() {
        out[c.index()] = r * conf.rest[k];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MetricMode {
    Strict,
    /// Intermediate/High truths predicted Melanocytic Suspect count as hits.
    SuspectCredit,
}

impl MetricMode {
    pub fn code(self) -> &'static str {
        match self {
            MetricMode::Strict => "strict",
            MetricMode::SuspectCredit => "suspect_credit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub label: String,
    pub ppv: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub balanced_accuracy: f64,
    pub support: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl MetricsRow {
    /// Row from a binary confusion table. Empty denominators give 0.
    pub fn from_counts(label: impl Into<String>, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ppv = ratio(tp, tp + fp);
        let sensitivity = ratio(tp, tp + fn_);
        let specificity = ratio(tn, tn + fp);
        let f1 = if ppv + sensitivity > 0.0 {
            2.0 * ppv * sensitivity / (ppv + sensitivity)
        } else {
            0.0
        };
        Self {
            label: label.into(),
            ppv,
            sensitivity,
            f1,
            balanced_accuracy: (sensitivity + specificity) / 2.0,
            support: tp + fn_,
        }
    }

    fn from_pairs(label: impl Into<String>, pairs: impl Iterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (truth, pred) in pairs {
            match (truth, pred) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        Self::from_counts(label, tp, fp, fn_, tn)
    }
}

/// Whether `pred` counts as a positive call for `class`, given the truth.
fn called(pred: FinalClass, truth: SpecimenClass, class: SpecimenClass, mode: MetricMode) -> bool {
    match pred {
        FinalClass::Class(p) => p == class,
        FinalClass::MelanocyticSuspect => {
            mode == MetricMode::SuspectCredit
                && truth == class
                && matches!(
                    class,
                    SpecimenClass::MelanocyticIntermediateRisk | SpecimenClass::MelanocyticHighRisk
                )
        }
    }
}

pub const SUSPECT_ROW: &str = "mel_suspect";

/// One-vs-rest rows for the six classes. In suspect-credit mode a seventh
/// row scores Intermediate+High truths against any suspect-level call.
pub fn confusion_metrics(
    predictions: &[FinalLabel],
    truths: &[SpecimenClass],
    mode: MetricMode,
) -> Result<Vec<MetricsRow>> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut rows: Vec<MetricsRow> = SpecimenClass::ALL
        .iter()
        .map(|&c| {
            MetricsRow::from_pairs(
                c.code(),
                predictions
                    .iter()
                    .zip(truths)
                    .map(|(p, &t)| (t == c, called(p.class, t, c, mode))),
            )
        })
        .collect();
    if mode == MetricMode::SuspectCredit {
        rows.push(MetricsRow::from_pairs(
            SUSPECT_ROW,
            predictions
                .iter()
                .zip(truths)
                .map(|(p, &t)| (t.label_group() != LabelGroup::Rest, p.class.is_suspect_level())),
        ));
    }
    Ok(rows)
}

/// Per-diagnosis rows: each is the confusion row of the diagnosis's class
/// computed on that diagnosis's specimens only. Intermediate and High
/// diagnoses get a second, suspect-credit row.
pub fn diagnosis_report(predictions: &[FinalLabel], diagnoses: &[&str]) -> Result<Vec<MetricsRow>> {
    if predictions.len() != diagnoses.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} diagnoses",
            predictions.len(),
            diagnoses.len()
        )));
    }
    let canonical: Vec<&str> = diagnoses
        .iter()
        .map(|d| Diagnosis::lookup(d).map(|d| d.name))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &(name, class, _) in DIAGNOSES {
        let subset: Vec<FinalLabel> = predictions
            .iter()
            .zip(&canonical)
            .filter(|(_, &d)| d == name)
            .map(|(p, _)| *p)
            .collect();
        let truths = vec![class; subset.len()];
        let strict = confusion_metrics(&subset, &truths, MetricMode::Strict)?;
        rows.push(MetricsRow {
            label: name.to_string(),
            ..strict[class.index()].clone()
        });
        if matches!(
            class,
            SpecimenClass::MelanocyticIntermediateRisk | SpecimenClass::MelanocyticHighRisk
        ) {
            let credit = confusion_metrics(&subset, &truths, MetricMode::SuspectCredit)?;
            rows.push(MetricsRow {
                label: format!("{name} -> {SUSPECT_ROW}"),
                ..credit[class.index()].clone()
            });
        }
    }
    Ok(rows)
}

/// Total order on scores used for worklist sorting: descending score, then
/// ascending id.
pub(crate) fn worklist_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}
