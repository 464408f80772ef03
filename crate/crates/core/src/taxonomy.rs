//! Class taxonomy, MPATH mapping, diagnosis vocabulary and the consensus
//! review rules used to establish melanocytic ground truth.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the six morphology-based specimen classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpecimenClass {
    Basaloid,
    Squamous,
    MelanocyticLowRisk,
    MelanocyticIntermediateRisk,
    MelanocyticHighRisk,
    Other,
}

impl SpecimenClass {
    pub const ALL: [SpecimenClass; 6] = [
        SpecimenClass::Basaloid,
        SpecimenClass::Squamous,
        SpecimenClass::MelanocyticLowRisk,
        SpecimenClass::MelanocyticIntermediateRisk,
        SpecimenClass::MelanocyticHighRisk,
        SpecimenClass::Other,
    ];

    /// Classes handled by the rest subclassifier, in head order.
    pub const REST: [SpecimenClass; 4] = [
        SpecimenClass::Basaloid,
        SpecimenClass::Squamous,
        SpecimenClass::MelanocyticLowRisk,
        SpecimenClass::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Stable identifier used in every file format.
    pub fn code(self) -> &'static str {
        match self {
            SpecimenClass::Basaloid => "basaloid",
            SpecimenClass::Squamous => "squamous",
            SpecimenClass::MelanocyticLowRisk => "mel_low",
            SpecimenClass::MelanocyticIntermediateRisk => "mel_int",
            SpecimenClass::MelanocyticHighRisk => "mel_high",
            SpecimenClass::Other => "other",
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.code() == code)
            .ok_or_else(|| Error::InvalidInput(format!("unknown class code {code:?}")))
    }

    pub fn is_melanocytic(self) -> bool {
        self.severity().is_some()
    }

    /// Position on the melanocytic severity scale (Low < Intermediate < High).
    pub fn severity(self) -> Option<u8> {
        match self {
            SpecimenClass::MelanocyticLowRisk => Some(0),
            SpecimenClass::MelanocyticIntermediateRisk => Some(1),
            SpecimenClass::MelanocyticHighRisk => Some(2),
            _ => None,
        }
    }

    /// Index within [`SpecimenClass::REST`], if this is a rest class.
    pub fn rest_index(self) -> Option<usize> {
        Self::REST.iter().position(|c| *c == self)
    }

    pub fn grouping(self) -> Grouping {
        suspect_grouping(self)
    }

    /// Label group used by the masked multi-task suspect subclassifier.
    pub fn label_group(self) -> LabelGroup {
        match self {
            SpecimenClass::MelanocyticHighRisk => LabelGroup::High,
            SpecimenClass::MelanocyticIntermediateRisk => LabelGroup::Intermediate,
            _ => LabelGroup::Rest,
        }
    }
}

impl fmt::Display for SpecimenClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SpecimenClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_code(s)
    }
}

/// Upstream branch: melanocytic suspect (Intermediate or High risk) or the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Grouping {
    Suspect,
    Rest,
}

impl Grouping {
    pub fn code(self) -> &'static str {
        match self {
            Grouping::Suspect => "suspect",
            Grouping::Rest => "rest",
        }
    }
}

/// Ground-truth group seen by the suspect subclassifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelGroup {
    High,
    Intermediate,
    Rest,
}

pub fn suspect_grouping(class: SpecimenClass) -> Grouping {
    match class {
        SpecimenClass::MelanocyticIntermediateRisk | SpecimenClass::MelanocyticHighRisk => {
            Grouping::Suspect
        }
        _ => Grouping::Rest,
    }
}

/// Class emitted by the inference pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FinalClass {
    Class(SpecimenClass),
    /// Intermediate or High risk that failed its confidence thresholds.
    MelanocyticSuspect,
}

impl FinalClass {
    pub const ALL: [FinalClass; 7] = [
        FinalClass::Class(SpecimenClass::Basaloid),
        FinalClass::Class(SpecimenClass::Squamous),
        FinalClass::Class(SpecimenClass::MelanocyticLowRisk),
        FinalClass::Class(SpecimenClass::MelanocyticIntermediateRisk),
        FinalClass::Class(SpecimenClass::MelanocyticHighRisk),
        FinalClass::Class(SpecimenClass::Other),
        FinalClass::MelanocyticSuspect,
    ];

    pub fn code(self) -> &'static str {
        match self {
            FinalClass::Class(c) => c.code(),
            FinalClass::MelanocyticSuspect => "mel_suspect",
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        if code == "mel_suspect" {
            Ok(FinalClass::MelanocyticSuspect)
        } else {
            SpecimenClass::from_code(code).map(FinalClass::Class)
        }
    }

    /// True for Intermediate, High and Suspect predictions.
    pub fn is_suspect_level(self) -> bool {
        matches!(
            self,
            FinalClass::MelanocyticSuspect
                | FinalClass::Class(SpecimenClass::MelanocyticIntermediateRisk)
                | FinalClass::Class(SpecimenClass::MelanocyticHighRisk)
        )
    }
}

impl fmt::Display for FinalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FinalLabel {
    pub class: FinalClass,
    pub low_confidence: bool,
}

impl FinalLabel {
    pub fn confident(class: FinalClass) -> Self {
        Self {
            class,
            low_confidence: false,
        }
    }
}

/// MPATH-Dx score, I through V.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MpathScore(u8);

impl MpathScore {
    pub fn new(score: u8) -> Result<Self> {
        if (1..=5).contains(&score) {
            Ok(Self(score))
        } else {
            Err(Error::InvalidInput(format!(
                "MPATH score must be in 1..=5, got {score}"
            )))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

pub fn mpath_to_class(score: MpathScore) -> SpecimenClass {
    match score.0 {
        1 | 2 => SpecimenClass::MelanocyticLowRisk,
        3 => SpecimenClass::MelanocyticIntermediateRisk,
        _ => SpecimenClass::MelanocyticHighRisk,
    }
}

/// Diagnostic entities and their enclosing class. The reference-set counts
/// double as sampling weights for synthetic data; entities without a count
/// are reporting names only.
pub const DIAGNOSES: &[(&str, SpecimenClass, u32)] = &[
    ("Nodular Basal Cell Carcinoma", SpecimenClass::Basaloid, 404),
    ("Basal Cell Carcinoma, NOS", SpecimenClass::Basaloid, 123),
    ("Basal Cell Carcinoma, Morphea type", SpecimenClass::Basaloid, 7),
    ("Pilomatrixoma", SpecimenClass::Basaloid, 5),
    ("Infiltrative Basal Cell Carcinoma", SpecimenClass::Basaloid, 5),
    ("Basal Cell Carcinoma", SpecimenClass::Basaloid, 0),
    ("Invasive Squamous Cell Carcinoma", SpecimenClass::Squamous, 269),
    (
        "Squamous Cell Carcinoma in situ (Bowen's Disease)",
        SpecimenClass::Squamous,
        254,
    ),
    ("Fibrokeratoma", SpecimenClass::Squamous, 4),
    ("Warty Dyskeratorma", SpecimenClass::Squamous, 3),
    ("Squamous Cell Carcinoma", SpecimenClass::Squamous, 0),
    ("Bowen's Disease", SpecimenClass::Squamous, 0),
    ("Melanoma", SpecimenClass::MelanocyticHighRisk, 102),
    ("Melanoma In Situ", SpecimenClass::MelanocyticIntermediateRisk, 202),
    ("Severe Dysplasia", SpecimenClass::MelanocyticIntermediateRisk, 9),
    (
        "Conventional Melanocytic Nevus (acquired and congenital)",
        SpecimenClass::MelanocyticLowRisk,
        368,
    ),
    ("Mild Dysplasia", SpecimenClass::MelanocyticLowRisk, 289),
    ("Moderate Dysplasia", SpecimenClass::MelanocyticLowRisk, 75),
    ("Halo Nevus", SpecimenClass::MelanocyticLowRisk, 14),
    ("Dysplastic Nevus, NOS", SpecimenClass::MelanocyticLowRisk, 12),
    ("Spitz Nevus", SpecimenClass::MelanocyticLowRisk, 2),
    ("Blue Nevus", SpecimenClass::MelanocyticLowRisk, 2),
    ("Dysplastic Nevus", SpecimenClass::MelanocyticLowRisk, 0),
    ("Dermal Nevus", SpecimenClass::MelanocyticLowRisk, 0),
    ("Compound Nevus", SpecimenClass::MelanocyticLowRisk, 0),
    ("Junctional Nevus", SpecimenClass::MelanocyticLowRisk, 0),
    ("Other Diagnoses", SpecimenClass::Other, 1360),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnosis {
    pub name: &'static str,
    pub class: SpecimenClass,
}

impl Diagnosis {
    pub fn lookup(name: &str) -> Result<Self> {
        let wanted = name.trim().to_lowercase();
        DIAGNOSES
            .iter()
            .find(|(n, _, _)| n.to_lowercase() == wanted)
            .map(|&(name, class, _)| Diagnosis { name, class })
            .ok_or_else(|| Error::UnknownDiagnosis {
                name: name.to_string(),
                vocabulary: DIAGNOSES
                    .iter()
                    .map(|(n, _, _)| *n)
                    .collect::<Vec<_>>()
                    .join("; "),
            })
    }
}

pub fn diagnosis_to_class(name: &str) -> Result<SpecimenClass> {
    Diagnosis::lookup(name).map(|d| d.class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsensusOutcome {
    Consensus(SpecimenClass),
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsensusDecision {
    pub outcome: ConsensusOutcome,
    pub reviews_used: u8,
}

/// Apply the panel rules: unanimous first three, or a 2/3 majority that both
/// extra reviewers confirm. Anything else is excluded.
pub fn consensus(
    first_three: [SpecimenClass; 3],
    extra_two: Option<[SpecimenClass; 2]>,
) -> Result<ConsensusDecision> {
    let [a, b, c] = first_three;
    if a == b && b == c {
        return Ok(ConsensusDecision {
            outcome: ConsensusOutcome::Consensus(a),
            reviews_used: 3,
        });
    }
    let majority = if a == b || a == c {
        Some(a)
    } else if b == c {
        Some(b)
    } else {
        None
    };
    let Some(majority) = majority else {
        return Ok(ConsensusDecision {
            outcome: ConsensusOutcome::Excluded,
            reviews_used: 3,
        });
    };
    let extras = extra_two.ok_or_else(|| {
        Error::IncompleteReview(format!(
            "2/3 majority for {majority} requires two additional reviews"
        ))
    })?;
    let outcome = if extras.iter().all(|&e| e == majority) {
        ConsensusOutcome::Consensus(majority)
    } else {
        ConsensusOutcome::Excluded
    };
    Ok(ConsensusDecision {
        outcome,
        reviews_used: 5,
    })
}
