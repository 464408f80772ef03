use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{SpecimenBag, Split};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{derive, derive_str, rng_from, Rng};
use crate::taxonomy::{SpecimenClass, DIAGNOSES};

/// Generator knobs. Defaults give the standard desk-scale dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub dim: usize,
    pub per_class: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Spacing of the melanocytic prototypes along the severity direction.
    pub delta: f64,
    /// Norm of the per-tile noise.
    pub sigma: f64,
    pub min_tiles: usize,
    pub max_tiles: usize,
    pub min_diagnostic_fraction: f64,
    pub max_diagnostic_fraction: f64,
    pub lab_id: String,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            dim: 128,
            per_class: 200,
            split: [0.7, 0.15, 0.15],
            delta: 0.6,
            sigma: 0.5,
            min_tiles: 20,
            max_tiles: 200,
            min_diagnostic_fraction: 0.05,
            max_diagnostic_fraction: 0.4,
            lab_id: "reference".into(),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.min_tiles == 0 || self.min_tiles > self.max_tiles {
            return bad(format!(
                "tile range [{}, {}] is invalid",
                self.min_tiles, self.max_tiles
            ));
        }
        let (lo, hi) = (self.min_diagnostic_fraction, self.max_diagnostic_fraction);
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return bad(format!("diagnostic fraction range [{lo}, {hi}] is invalid"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !self.delta.is_finite() {
            return bad("noise and separation must be finite, noise non-negative".into());
        }
        check_split(&self.split)
    }
}

fn check_split(split: &[f64; 3]) -> Result<()> {
    if split.iter().any(|f| !(0.0..=1.0).contains(f)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split fractions {split:?} must be in [0, 1] and sum to 1"
        )));
    }
    Ok(())
}

fn gaussian(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit class prototypes plus a shared background prototype. The three
/// melanocytic prototypes sit along one direction from the low-risk one, so
/// neighbours on the severity scale are the most confusable.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    /// Indexed by [`SpecimenClass::index`].
    pub class: Vec<Vec<f64>>,
    pub background: Vec<f64>,
    pub direction: Vec<f64>,
    pub delta: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl PrototypeSet {
    pub fn new(dim: usize, delta: f64, sigma: f64, seed: u64) -> Result<Self> {
        if dim < 6 {
            return Err(Error::InvalidInput(format!(
                "prototype space needs at least 6 dimensions, got {dim}"
            )));
        }
        let mut rng = rng_from(derive(seed, 0x5052_4f54));
        // Gram-Schmidt over six Gaussian draws:
        // background, basaloid, squamous, other, low risk, severity direction.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(6);
        while basis.len() < 6 {
            let mut v = gaussian(dim, &mut rng);
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
                normalize(&mut v);
                basis.push(v);
            }
        }
        let direction = basis[5].clone();
        let low = basis[4].clone();
        let along = |k: f64| {
            let mut v: Vec<f64> = low.iter().zip(&direction).map(|(l, d)| l + k * delta * d).collect();
            normalize(&mut v);
            v
        };
        let mut class = vec![Vec::new(); 6];
        class[SpecimenClass::Basaloid.index()] = basis[1].clone();
        class[SpecimenClass::Squamous.index()] = basis[2].clone();
        class[SpecimenClass::Other.index()] = basis[3].clone();
        class[SpecimenClass::MelanocyticLowRisk.index()] = low.clone();
        class[SpecimenClass::MelanocyticIntermediateRisk.index()] = along(1.0);
        class[SpecimenClass::MelanocyticHighRisk.index()] = along(2.0);
        Ok(Self {
            class,
            background: basis[0].clone(),
            direction,
            delta,
            sigma,
            seed,
        })
    }

    pub fn from_params(params: &SynthParams, seed: u64) -> Result<Self> {
        Self::new(params.dim, params.delta, params.sigma, seed)
    }

    pub fn dim(&self) -> usize {
        self.background.len()
    }

    pub fn prototype(&self, class: SpecimenClass) -> &[f64] {
        &self.class[class.index()]
    }

    /// `μ + σ·g/√dim`: the noise has expected norm close to σ.
    fn noisy(&self, mu: &[f64], rng: &mut Rng) -> Vec<f64> {
        let scale = self.sigma / (self.dim() as f64).sqrt();
        mu.iter()
            .map(|m| {
                let g: f64 = StandardNormal.sample(rng);
                m + scale * g
            })
            .collect()
    }
}

fn pick_diagnosis(class: SpecimenClass, rng: &mut Rng) -> String {
    let pool: Vec<(&str, u32)> = DIAGNOSES
        .iter()
        .filter(|(_, c, n)| *c == class && *n > 0)
        .map(|&(name, _, n)| (name, n))
        .collect();
    let dist = WeightedIndex::new(pool.iter().map(|p| p.1)).expect("every class has counts");
    pool[dist.sample(rng)].0.to_string()
}

/// One synthetic specimen. Diagnostic tiles carry the class prototype,
/// the rest carry the background prototype.
pub fn gen_specimen(
    class: SpecimenClass,
    prototypes: &PrototypeSet,
    params: &SynthParams,
    specimen_id: &str,
    rng: &mut Rng,
) -> Result<SpecimenBag> {
    params.validate()?;
    if params.dim != prototypes.dim() {
        return Err(Error::Shape(format!(
            "params ask for dim {}, prototypes have {}",
            params.dim,
            prototypes.dim()
        )));
    }
    let n = rng.random_range(params.min_tiles..=params.max_tiles);
    let frac = rng.random_range(params.min_diagnostic_fraction..=params.max_diagnostic_fraction);
    let n_diag = ((frac * n as f64).round() as usize).clamp(1, n);
    let mut diagnostic = sample(rng, n, n_diag).into_vec();
    diagnostic.sort_unstable();
    let mut is_diag = vec![false; n];
    diagnostic.iter().for_each(|&i| is_diag[i] = true);

    let mu = prototypes.prototype(class);
    let mut data = Vec::with_capacity(n * params.dim);
    for &d in &is_diag {
        let proto = if d { mu } else { &prototypes.background };
        data.extend(prototypes.noisy(proto, rng));
    }
    Ok(SpecimenBag {
        specimen_id: specimen_id.to_string(),
        lab_id: params.lab_id.clone(),
        label: class,
        diagnosis: pick_diagnosis(class, rng),
        split: Split::Train,
        tiles: Matrix::from_vec(n, params.dim, data)?,
        diagnostic_tiles: diagnostic,
    })
}

/// Per-split counts for `n` specimens: train and validation rounded, test
/// takes the remainder.
pub fn split_counts(n: usize, split: &[f64; 3]) -> [usize; 3] {
    let train = ((split[0] * n as f64).round() as usize).min(n);
    let val = ((split[1] * n as f64).round() as usize).min(n - train);
    [train, val, n - train - val]
}

/// Stratified dataset with `counts[class.index()]` specimens per class.
pub fn gen_dataset(
    counts: &[usize; 6],
    prototypes: &PrototypeSet,
    params: &SynthParams,
    seed: u64,
) -> Result<Vec<SpecimenBag>> {
    params.validate()?;
    if let Some(c) = SpecimenClass::ALL.iter().find(|c| counts[c.index()] == 0) {
        return Err(Error::InvalidInput(format!("no specimens requested for {c}")));
    }
    let mut bags = Vec::new();
    for class in SpecimenClass::ALL {
        let n = counts[class.index()];
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from(derive(seed, class.index() as u64 + 1)));
        let [train, val, _] = split_counts(n, &params.split);
        let mut split_of = vec![Split::Test; n];
        for (rank, &i) in order.iter().enumerate() {
            split_of[i] = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
        for (i, split) in split_of.into_iter().enumerate() {
            let id = format!("{}-{}-{i:04}", params.lab_id, class.code());
            let mut rng = rng_from(derive_str(seed, &id));
            let mut bag = gen_specimen(class, prototypes, params, &id, &mut rng)?;
            bag.split = split;
            bags.push(bag);
        }
    }
    Ok(bags)
}

/// Scanner/stain shift of a new lab, acting on embeddings:
/// `x ↦ (I + R) x + b` with a fixed random `R` and offset `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabShift {
    pub matrix: Matrix,
    pub offset: Vec<f64>,
}

impl LabShift {
    /// `mix` scales the random part of the linear map (entries of `R` have
    /// standard deviation `mix/√dim`); `offset_norm` is `|b|`.
    pub fn new(dim: usize, mix: f64, offset_norm: f64, seed: u64) -> Self {
        let mut rng = rng_from(derive(seed, 0x5348_4946));
        let scale = mix / (dim as f64).sqrt();
        let mut matrix = Matrix::identity(dim);
        for v in matrix.data_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v += scale * g;
        }
        let mut offset = gaussian(dim, &mut rng);
        normalize(&mut offset);
        offset.iter_mut().for_each(|x| *x *= offset_norm);
        Self { matrix, offset }
    }

    pub fn apply(&self, tiles: &Matrix) -> Result<Matrix> {
        let mut out = tiles.matmul_t(&self.matrix)?;
        out.add_row_vector(&self.offset);
        Ok(out)
    }

    pub fn apply_bag(&self, bag: &SpecimenBag) -> Result<SpecimenBag> {
        Ok(SpecimenBag {
            tiles: self.apply(&bag.tiles)?,
            ..bag.clone()
        })
    }
}
