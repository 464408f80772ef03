use rand::Rng as _;

use crate::data::SpecimenBag;
use crate::error::{Error, Result};
use crate::rng::{derive_str, rng_from, Rng};
use crate::taxonomy::{consensus, ConsensusOutcome, SpecimenClass};

use SpecimenClass::{
    Basaloid, MelanocyticHighRisk as High, MelanocyticIntermediateRisk as Int,
    MelanocyticLowRisk as Low, Other, Squamous,
};

/// Row-stochastic reviewer confusion matrix, `K[true][assigned]`, indexed by
/// [`SpecimenClass::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewerKernel {
    rows: [[f64; 6]; 6],
}

impl ReviewerKernel {
    pub fn new(rows: [[f64; 6]; 6]) -> Result<Self> {
        let k = Self { rows };
        k.validate()?;
        Ok(k)
    }

    pub fn identity() -> Self {
        let mut rows = [[0.0; 6]; 6];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { rows }
    }

    /// Melanocytic errors go mostly to the adjacent severity class
    /// (80/20 adjacent/far); other classes spread their error evenly.
    pub fn standard() -> Self {
        let mut rows = [[0.0; 6]; 6];
        for c in [Basaloid, Squamous, Other] {
            for t in SpecimenClass::ALL {
                rows[c.index()][t.index()] = if t == c { 0.95 } else { 0.01 };
            }
        }
        let mut set = |from: SpecimenClass, to: SpecimenClass, p: f64| rows[from.index()][to.index()] = p;
        set(Low, Low, 0.80);
        set(Low, Int, 0.16);
        set(Low, High, 0.04);
        // intermediate has two neighbours and no far class
        set(Int, Int, 0.65);
        set(Int, Low, 0.175);
        set(Int, High, 0.175);
        set(High, High, 0.85);
        set(High, Int, 0.12);
        set(High, Low, 0.03);
        Self { rows }
    }

    /// Kernel with every diagonal entry set to `diag` and the remaining mass
    /// spread in proportion to the standard kernel's off-diagonal entries.
    pub fn with_diagonal(diag: f64) -> Result<Self> {
        let base = Self::standard();
        let mut rows = base.rows;
        for (i, row) in rows.iter_mut().enumerate() {
            let off: f64 = (0..6).filter(|&j| j != i).map(|j| base.rows[i][j]).sum();
            for j in 0..6 {
                row[j] = if i == j { diag } else { base.rows[i][j] / off * (1.0 - diag) };
            }
        }
        Self::new(rows)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidInput(format!("kernel row {i} has entries outside [0, 1]")));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("kernel row {i} does not sum to 1")));
            }
            if row[i] < 0.5 {
                return Err(Error::InvalidInput(format!(
                    "kernel diagonal {i} is {}, below 0.5",
                    row[i]
                )));
            }
        }
        Ok(())
    }

    pub fn prob(&self, truth: SpecimenClass, assigned: SpecimenClass) -> f64 {
        self.rows[truth.index()][assigned.index()]
    }

    pub fn rows(&self) -> &[[f64; 6]; 6] {
        &self.rows
    }

    fn draw(&self, truth: SpecimenClass, rng: &mut Rng) -> SpecimenClass {
        let u: f64 = rng.random();
        let row = &self.rows[truth.index()];
        let mut acc = 0.0;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return SpecimenClass::ALL[j];
            }
        }
        // rounding slack: last class with positive mass
        let last = row.iter().rposition(|&p| p > 0.0).expect("row sums to 1");
        SpecimenClass::ALL[last]
    }
}

/// Independent reviewer opinions for one specimen.
pub fn simulate_reviews(
    truth: SpecimenClass,
    kernel: &ReviewerKernel,
    n_reviewers: usize,
    rng: &mut Rng,
) -> Result<Vec<SpecimenClass>> {
    if n_reviewers != 3 && n_reviewers != 5 {
        return Err(Error::InvalidInput(format!(
            "panels have 3 or 5 reviewers, got {n_reviewers}"
        )));
    }
    kernel.validate()?;
    Ok((0..n_reviewers).map(|_| kernel.draw(truth, rng)).collect())
}

/// A bag with its panel opinions. Only melanocytic specimens are reviewed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewedBag {
    pub bag: SpecimenBag,
    /// Five opinions for melanocytic specimens; the last two are consulted
    /// only for a 2/3 majority. Empty otherwise.
    pub reviews: Vec<SpecimenClass>,
}

/// Draw panel opinions for every melanocytic bag, seeded per specimen.
pub fn review_bags(
    bags: Vec<SpecimenBag>,
    kernel: &ReviewerKernel,
    seed: u64,
) -> Result<Vec<ReviewedBag>> {
    kernel.validate()?;
    bags.into_iter()
        .map(|bag| {
            let reviews = if bag.label.is_melanocytic() {
                let mut rng = rng_from(derive_str(seed, &bag.specimen_id));
                simulate_reviews(bag.label, kernel, 5, &mut rng)?
            } else {
                Vec::new()
            };
            Ok(ReviewedBag { bag, reviews })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusSets {
    /// Non-melanocytic bags plus melanocytic bags that reached consensus,
    /// labelled with the consensus class.
    pub consensus: Vec<SpecimenBag>,
    /// Excluded melanocytic bags, labelled by the first reviewer.
    pub non_consensus: Vec<SpecimenBag>,
}

impl ConsensusSets {
    /// Fraction of reviewed specimens that reached consensus.
    pub fn melanocytic_retention(&self) -> f64 {
        let kept = self.consensus.iter().filter(|b| b.label.is_melanocytic()).count();
        let total = kept + self.non_consensus.len();
        if total == 0 {
            1.0
        } else {
            kept as f64 / total as f64
        }
    }
}

pub fn apply_consensus_filter(reviewed: Vec<ReviewedBag>) -> Result<ConsensusSets> {
    let mut sets = ConsensusSets {
        consensus: Vec::new(),
        non_consensus: Vec::new(),
    };
    for ReviewedBag { mut bag, reviews } in reviewed {
        if reviews.is_empty() {
            if bag.label.is_melanocytic() {
                return Err(Error::IncompleteReview(format!(
                    "melanocytic specimen {} has no reviews",
                    bag.specimen_id
                )));
            }
            sets.consensus.push(bag);
            continue;
        }
        if reviews.len() < 3 {
            return Err(Error::IncompleteReview(format!(
                "specimen {} has {} reviews",
                bag.specimen_id,
                reviews.len()
            )));
        }
        let first = [reviews[0], reviews[1], reviews[2]];
        let extra = (reviews.len() >= 5).then(|| [reviews[3], reviews[4]]);
        match consensus(first, extra)?.outcome {
            ConsensusOutcome::Consensus(c) => {
                bag.label = c;
                sets.consensus.push(bag);
            }
            ConsensusOutcome::Excluded => {
                bag.label = reviews[0];
                sets.non_consensus.push(bag);
            }
        }
    }
    Ok(sets)
}
