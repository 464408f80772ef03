use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::taxonomy::SpecimenClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    Calibration,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Calibration];

    pub fn code(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Calibration => "calibration",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.code() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown split {s:?}")))
    }
}

/// One specimen: its quality-assured tile embeddings and specimen-level label.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecimenBag {
    pub specimen_id: String,
    pub lab_id: String,
    pub label: SpecimenClass,
    pub diagnosis: String,
    pub split: Split,
    /// `n × dim` embeddings, one row per tile.
    pub tiles: Matrix,
    /// Generator-only metadata: rows that carry the class signal. Never used
    /// for training; empty for real data.
    pub diagnostic_tiles: Vec<usize>,
}

impl SpecimenBag {
    pub fn n_tiles(&self) -> usize {
        self.tiles.rows()
    }

    pub fn dim(&self) -> usize {
        self.tiles.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: &str| Error::Inconsistent {
            specimen: self.specimen_id.clone(),
            detail: detail.to_string(),
        };
        if self.specimen_id.is_empty() {
            return Err(Error::InvalidInput("empty specimen id".into()));
        }
        if self.tiles.rows() == 0 {
            return Err(fail("bag has no tiles"));
        }
        if !self.tiles.is_finite() {
            return Err(fail("non-finite embedding"));
        }
        if self.diagnostic_tiles.iter().any(|&i| i >= self.tiles.rows()) {
            return Err(fail("diagnostic tile index out of range"));
        }
        Ok(())
    }
}

/// Bags of the given split, in input order.
pub fn split_of(bags: &[SpecimenBag], split: Split) -> Vec<&SpecimenBag> {
    bags.iter().filter(|b| b.split == split).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_codes_round_trip() {
        for s in Split::ALL {
            assert_eq!(s.code().parse::<Split>().unwrap(), s);
        }
        assert!("holdout".parse::<Split>().is_err());
    }
}
