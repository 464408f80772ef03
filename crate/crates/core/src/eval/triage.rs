use log::warn;
use rand::Rng as _;
use rayon::prelude::*;

use super::metrics::worklist_order;
use crate::error::{Error, Result};
use crate::rng::{derive, rng_from};
use crate::taxonomy::{LabelGroup, SpecimenClass};

/// One test-pool entry for the worklist simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TriageCase {
    pub specimen_id: String,
    pub suspect_confidence: f64,
    pub truth: SpecimenClass,
}

impl TriageCase {
    fn is_suspect(&self) -> bool {
        self.truth.label_group() != LabelGroup::Rest
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriageConfig {
    pub simulations: usize,
    /// Cases per simulated caseload; `None` uses the pool size.
    pub caseload: Option<usize>,
    /// Number of grid intervals between 0 and 1.
    pub grid_steps: usize,
    pub seed: u64,
}

impl Default for TriageConfig {
    fn default() -> Self {
        Self {
            simulations: 1000,
            caseload: None,
            grid_steps: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriageCurve {
    pub fractions: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub simulations: usize,
}

impl TriageCurve {
    /// Mean sensitivity at the first grid fraction ≥ `fraction`.
    pub fn mean_at(&self, fraction: f64) -> f64 {
        let i = self
            .fractions
            .iter()
            .position(|&f| f >= fraction - 1e-12)
            .unwrap_or(self.fractions.len() - 1);
        self.mean[i]
    }
}

const MAX_RESAMPLES: usize = 100;

/// Stratified bootstrap draw: each class keeps its pool share of the caseload.
fn draw_caseload<'a>(
    strata: &[Vec<&'a TriageCase>],
    pool: usize,
    caseload: usize,
    rng: &mut crate::rng::Rng,
) -> Vec<&'a TriageCase> {
    let mut out = Vec::with_capacity(caseload);
    for stratum in strata.iter().filter(|s| !s.is_empty()) {
        let n = ((stratum.len() * caseload) as f64 / pool as f64).round() as usize;
        for _ in 0..n {
            out.push(stratum[rng.random_range(0..stratum.len())]);
        }
    }
    out
}

/// Sensitivity to suspect truths after reviewing each grid fraction of a
/// worklist sorted by descending suspect confidence.
fn sensitivity_curve(mut cases: Vec<&TriageCase>, fractions: &[f64]) -> Vec<f64> {
    cases.sort_by(|a, b| {
        worklist_order(
            (a.suspect_confidence, &a.specimen_id),
            (b.suspect_confidence, &b.specimen_id),
        )
    });
    let total = cases.iter().filter(|c| c.is_suspect()).count();
    let mut found = Vec::with_capacity(cases.len() + 1);
    found.push(0usize);
    for c in &cases {
        found.push(found.last().unwrap() + usize::from(c.is_suspect()));
    }
    let n = cases.len();
    fractions
        .iter()
        .map(|&f| {
            let k = ((f * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
            found[k] as f64 / total as f64
        })
        .collect()
}

/// Bootstrap simulation of a worklist prioritized by the upstream suspect
/// confidence.
pub fn triage_simulation(pool: &[TriageCase], config: &TriageConfig) -> Result<TriageCurve> {
    if config.simulations == 0 {
        return Err(Error::InvalidInput("at least one simulation is required".into()));
    }
    if config.grid_steps == 0 {
        return Err(Error::InvalidInput("grid needs at least one step".into()));
    }
    if pool.is_empty() {
        return Err(Error::EmptySplit("test".into()));
    }
    if !pool.iter().any(TriageCase::is_suspect) {
        return Err(Error::InvalidInput("test pool has no suspect-class specimens".into()));
    }
    let caseload = config.caseload.unwrap_or(pool.len());
    if caseload == 0 {
        return Err(Error::InvalidInput("caseload must be positive".into()));
    }
    let strata: Vec<Vec<&TriageCase>> = SpecimenClass::ALL
        .iter()
        .map(|&c| pool.iter().filter(|p| p.truth == c).collect())
        .collect();
    let fractions: Vec<f64> = (0..=config.grid_steps)
        .map(|i| i as f64 / config.grid_steps as f64)
        .collect();

    let curves: Vec<Vec<f64>> = (0..config.simulations)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng_from(derive(config.seed, s as u64));
            for _ in 0..MAX_RESAMPLES {
                let cases = draw_caseload(&strata, pool.len(), caseload, &mut rng);
                if cases.iter().any(|c| c.is_suspect()) {
                    return Ok(sensitivity_curve(cases, &fractions));
                }
            }
            warn!("simulation {s}: no suspect cases after {MAX_RESAMPLES} draws");
            Err(Error::InvalidInput(format!(
                "caseload of {caseload} never contained a suspect-class specimen"
            )))
        })
        .collect::<Result<_>>()?;

    let n = curves.len() as f64;
    let mut mean = vec![0.0; fractions.len()];
    let mut sq = vec![0.0; fractions.len()];
    for c in &curves {
        for (i, v) in c.iter().enumerate() {
            mean[i] += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for c in &curves {
        for (i, v) in c.iter().enumerate() {
            sq[i] += (v - mean[i]).powi(2);
        }
    }
    let std = sq.iter().map(|s| (s / n).sqrt()).collect();
    Ok(TriageCurve {
        fractions,
        mean,
        std,
        simulations: config.simulations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SpecimenClass::*;

    fn case(id: usize, conf: f64, truth: SpecimenClass) -> TriageCase {
        TriageCase {
            specimen_id: format!("s{id:03}"),
            suspect_confidence: conf,
            truth,
        }
    }

    #[test]
    fn perfect_classifier_saturates_at_prevalence() {
        let pool: Vec<TriageCase> = (0..100)
            .map(|i| {
                if i < 20 {
                    case(i, 0.9, MelanocyticHighRisk)
                } else {
                    case(i, 0.1, Basaloid)
                }
            })
            .collect();
        let cfg = TriageConfig {
            simulations: 20,
            ..TriageConfig::default()
        };
        let curve = triage_simulation(&pool, &cfg).unwrap();
        assert_eq!(curve.mean_at(0.2), 1.0);
        assert!(curve.mean_at(0.1) < 1.0);
        assert_eq!(*curve.mean.last().unwrap(), 1.0);
        assert_eq!(curve.std[20], 0.0);
    }

    #[test]
    fn rejects_pools_without_suspects() {
        let pool = vec![case(0, 0.5, Basaloid)];
        assert!(triage_simulation(&pool, &TriageConfig::default()).is_err());
        assert!(triage_simulation(&[], &TriageConfig::default()).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let pool: Vec<TriageCase> = (0..30)
            .map(|i| case(i, (i as f64 * 0.37).sin().abs(), SpecimenClass::ALL[i % 6]))
            .collect();
        let cfg = TriageConfig {
            simulations: 50,
            seed: 9,
            ..TriageConfig::default()
        };
        assert_eq!(triage_simulation(&pool, &cfg).unwrap(), triage_simulation(&pool, &cfg).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn curve_is_monotone_and_ends_at_one(
            data in prop::collection::vec((0.0f64..1.0, 0usize..6), 1..40),
            seed in any::<u64>(),
        ) {
            let mut pool: Vec<TriageCase> = data.iter().enumerate().map(|(i, d)| case(i, d.0, SpecimenClass::ALL[d.1])).collect();
            pool.push(case(99, 0.5, MelanocyticIntermediateRisk));
            let cfg = TriageConfig { simulations: 10, caseload: None, grid_steps: 20, seed };
            let curve = triage_simulation(&pool, &cfg).unwrap();
            for w in curve.mean.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
            prop_assert_eq!(*curve.mean.last().unwrap(), 1.0);
            prop_assert!(curve.std.iter().all(|&s| s >= 0.0));
        }
    }
}
