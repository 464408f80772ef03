//! Attention-based multiple-instance learning over specimen bags.
//!
//! A bag model encodes each tile with an MLP, pools the encodings with gated
//! attention and feeds the pooled vector to one or more softmax task heads.

use std::cmp::Ordering;

use log::debug;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::nn::{
    adam_step, cross_entropy, softmax, AdamConfig, AdamState, DropoutSpec, Matrix, Mlp, MlpCache,
    MlpPrefix, ParamSet,
};
use crate::rng::{derive, rng_from, Rng};
use crate::taxonomy::LabelGroup;

/// Layer widths of a bag model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub encoder: Vec<usize>,
    pub attention_dim: usize,
}

impl ModelDims {
    /// Full-width stack: 1024, 1024, 512, 512 with a 256-wide attention layer.
    pub fn full(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            encoder: vec![1024, 1024, 512, 512],
            attention_dim: 256,
        }
    }

    /// Same shape at 1/16 width; the default for synthetic runs.
    pub fn desk(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            encoder: vec![64, 64, 32, 32],
            attention_dim: 16,
        }
    }

    /// Small dims used by gradient checks.
    pub fn reduced() -> Self {
        Self {
            embed_dim: 32,
            encoder: vec![32, 32, 16, 16],
            attention_dim: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.attention_dim == 0 || self.encoder.is_empty() {
            return Err(Error::InvalidInput(format!("degenerate model dims {self:?}")));
        }
        if self.encoder.contains(&0) {
            return Err(Error::InvalidInput("zero-width encoder layer".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.encoder.last().expect("validated")
    }
}

fn uniform_matrix(rows: usize, cols: usize, fan: usize, rng: &mut Rng) -> Matrix {
    let limit = (6.0 / fan as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Gated attention: `s = wᵀ(tanh(V h) ⊙ σ(U h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `Da × dim`
    pub v: Matrix,
    /// `Da × dim`
    pub u: Matrix,
    pub w: Vec<f64>,
}

impl AttentionParams {
    pub fn new(dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let v = uniform_matrix(hidden, dim, hidden + dim, rng);
        let u = uniform_matrix(hidden, dim, hidden + dim, rng);
        let w = uniform_matrix(1, hidden, hidden + 1, rng).into_vec();
        Self { v, u, w }
    }

    pub fn dim(&self) -> usize {
        self.v.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w.len()
    }
}

/// Linear map from the pooled vector to `k` logits, read through a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub name: String,
    /// `k × dim`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl TaskHead {
    pub fn new(name: &str, dim: usize, classes: usize, rng: &mut Rng) -> Self {
        Self {
            name: name.to_string(),
            weight: uniform_matrix(classes, dim, classes + dim, rng),
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weight.matvec(x);
        for (a, b) in z.iter_mut().zip(&self.bias) {
            *a += b;
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadSpec {
    pub name: String,
    pub classes: usize,
}

impl HeadSpec {
    pub fn new(name: &str, classes: usize) -> Self {
        Self {
            name: name.to_string(),
            classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagModel {
    pub encoder: Mlp,
    pub attention: AttentionParams,
    pub heads: Vec<TaskHead>,
}

/// Result of one forward pass over a bag.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOutput {
    pub logits: Vec<Vec<f64>>,
    /// Per-head softmax probabilities.
    pub probs: Vec<Vec<f64>>,
    /// Attention weight per tile, in input order.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
struct AttentionTrace {
    tanh: Matrix,
    gate: Matrix,
    weights: Vec<f64>,
    pooled: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BagCache {
    encoder: MlpCache,
    encoded: Matrix,
    attention: AttentionTrace,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Tiles sorted by (score, row contents). Reducing in this order makes the
/// pooled vector independent of the order tiles were supplied in.
fn canonical_order(scores: &[f64], h: &Matrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[i]
            .total_cmp(&scores[j])
            .then_with(|| lexicographic(h.row(i), h.row(j)))
    });
    order
}

fn attend(h: &Matrix, att: &AttentionParams) -> Result<AttentionTrace> {
    if h.rows() == 0 {
        return Err(Error::EmptyBag);
    }
    if h.cols() != att.dim() {
        return Err(Error::Shape(format!(
            "encoded tiles are {} wide, attention expects {}",
            h.cols(),
            att.dim()
        )));
    }
    let mut tanh = h.matmul_t(&att.v)?;
    tanh.map_inplace(f64::tanh);
    let mut gate = h.matmul_t(&att.u)?;
    gate.map_inplace(sigmoid);
    let scores: Vec<f64> = (0..h.rows())
        .map(|i| {
            let mut s = 0.0;
            for ((w, t), g) in att.w.iter().zip(tanh.row(i)).zip(gate.row(i)) {
                s += w * t * g;
            }
            s
        })
        .collect();

    let order = canonical_order(&scores, h);
    let max = scores[*order.last().expect("nonempty")];
    let mut weights = vec![0.0; scores.len()];
    let mut total = 0.0;
    for &i in &order {
        weights[i] = (scores[i] - max).exp();
        total += weights[i];
    }
    for w in &mut weights {
        *w /= total;
    }
    let mut pooled = vec![0.0; h.cols()];
    for &i in &order {
        let a = weights[i];
        for (p, x) in pooled.iter_mut().zip(h.row(i)) {
            *p += a * x;
        }
    }
    Ok(AttentionTrace {
        tanh,
        gate,
        weights,
        pooled,
    })
}

/// Pool encoded tiles; returns the pooled vector and per-tile weights.
pub fn attention_pool(encoded: &Matrix, attention: &AttentionParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let trace = attend(encoded, attention)?;
    Ok((trace.pooled, trace.weights))
}

impl BagModel {
    pub fn new(dims: &ModelDims, heads: &[HeadSpec], seed: u64) -> Result<Self> {
        dims.validate()?;
        if heads.is_empty() || heads.iter().any(|h| h.classes < 2) {
            return Err(Error::InvalidInput(
                "a bag model needs at least one head with two or more classes".into(),
            ));
        }
        let mut rng = rng_from(seed);
        let encoder = Mlp::encoder(dims.embed_dim, &dims.encoder, &mut rng);
        let feat = dims.feature_dim();
        let attention = AttentionParams::new(feat, dims.attention_dim, &mut rng);
        let heads = heads
            .iter()
            .map(|h| TaskHead::new(&h.name, feat, h.classes, &mut rng))
            .collect();
        Ok(Self {
            encoder,
            attention,
            heads,
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embed_dim: self.encoder.in_dim(),
            encoder: self.encoder.widths(),
            attention_dim: self.attention.hidden(),
        }
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }

    fn check_tiles(&self, tiles: &Matrix) -> Result<()> {
        if tiles.rows() == 0 {
            return Err(Error::EmptyBag);
        }
        if tiles.cols() != self.encoder.in_dim() {
            return Err(Error::Shape(format!(
                "tiles are {} wide, model expects {}",
                tiles.cols(),
                self.encoder.in_dim()
            )));
        }
        Ok(())
    }

    fn head_outputs(&self, pooled: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let logits: Vec<Vec<f64>> = self.heads.iter().map(|h| h.logits(pooled)).collect();
        let probs = logits.iter().map(|z| softmax(z)).collect();
        (logits, probs)
    }

    fn forward_cached(
        &self,
        tiles: &Matrix,
        dropout: &DropoutSpec,
        rng: &mut Rng,
    ) -> Result<(Vec<Vec<f64>>, BagCache)> {
        self.check_tiles(tiles)?;
        let (encoded, encoder) = self.encoder.forward_with_rng(tiles, dropout, rng)?;
        let attention = attend(&encoded, &self.attention)?;
        let logits = self.heads.iter().map(|h| h.logits(&attention.pooled)).collect();
        Ok((
            logits,
            BagCache {
                encoder,
                encoded,
                attention,
            },
        ))
    }

    /// Forward pass over one bag; deterministic given `seed`.
    pub fn forward(&self, tiles: &Matrix, dropout: &DropoutSpec, seed: u64) -> Result<BagOutput> {
        self.check_tiles(tiles)?;
        let encoded = self.encoder.infer(tiles, dropout, seed)?;
        let trace = attend(&encoded, &self.attention)?;
        let (logits, probs) = self.head_outputs(&trace.pooled);
        Ok(BagOutput {
            logits,
            probs,
            weights: trace.weights,
        })
    }

    /// Deterministic encoder prefix shared by Monte Carlo passes.
    pub fn prefix(&self, tiles: &Matrix) -> Result<MlpPrefix> {
        self.check_tiles(tiles)?;
        self.encoder.prefix(tiles)
    }

    /// One stochastic pass from a precomputed prefix; per-head probabilities.
    pub fn sample_probs(
        &self,
        prefix: &MlpPrefix,
        dropout: &DropoutSpec,
        rng: &mut Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let encoded = self.encoder.infer_suffix(prefix, dropout, rng)?;
        let trace = attend(&encoded, &self.attention)?;
        Ok(self.head_outputs(&trace.pooled).1)
    }

    /// Head probabilities for every tile read on its own (no pooling).
    pub fn tile_probs(&self, tiles: &Matrix, head: usize) -> Result<Vec<Vec<f64>>> {
        self.check_tiles(tiles)?;
        let head = self
            .heads
            .get(head)
            .ok_or_else(|| Error::InvalidInput(format!("no head {head}")))?;
        let encoded = self.encoder.infer(tiles, &DropoutSpec::off(), 0)?;
        Ok((0..encoded.rows())
            .map(|r| softmax(&head.logits(encoded.row(r))))
            .collect())
    }

    fn backward(&self, cache: &BagCache, dlogits: &[Vec<f64>]) -> Result<BagModel> {
        let mut grads = self.zeros_like();
        let trace = &cache.attention;
        let h = &cache.encoded;
        let dim = h.cols();

        let mut gp = vec![0.0; dim];
        for ((head, gh), dl) in self.heads.iter().zip(&mut grads.heads).zip(dlogits) {
            for (o, &d) in dl.iter().enumerate() {
                for (gw, p) in gh.weight.row_mut(o).iter_mut().zip(&trace.pooled) {
                    *gw = d * p;
                }
                for (g, w) in gp.iter_mut().zip(head.weight.row(o)) {
                    *g += d * w;
                }
            }
            gh.bias.clone_from(dl);
        }

        let n = h.rows();
        let da = self.attention.hidden();
        let dots: Vec<f64> = (0..n)
            .map(|i| gp.iter().zip(h.row(i)).map(|(g, x)| g * x).sum())
            .collect();
        let mean: f64 = trace.weights.iter().zip(&dots).map(|(a, d)| a * d).sum();
        let mut dh = Matrix::zeros(n, dim);
        let mut dzv = Matrix::zeros(n, da);
        let mut dzu = Matrix::zeros(n, da);
        let dw = &mut grads.attention.w;
        for i in 0..n {
            let a = trace.weights[i];
            for (d, g) in dh.row_mut(i).iter_mut().zip(&gp) {
                *d = a * g;
            }
            let ds = a * (dots[i] - mean);
            let (t, g) = (trace.tanh.row(i), trace.gate.row(i));
            let rv = dzv.row_mut(i);
            for k in 0..da {
                dw[k] += ds * t[k] * g[k];
                rv[k] = ds * self.attention.w[k] * g[k] * (1.0 - t[k] * t[k]);
            }
            let ru = dzu.row_mut(i);
            for k in 0..da {
                ru[k] = ds * self.attention.w[k] * t[k] * g[k] * (1.0 - g[k]);
            }
        }
        grads.attention.v = dzv.t_matmul(h)?;
        grads.attention.u = dzu.t_matmul(h)?;
        let through_v = dzv.matmul(&self.attention.v)?;
        let through_u = dzu.matmul(&self.attention.u)?;
        for ((d, a), b) in dh
            .data_mut()
            .iter_mut()
            .zip(through_v.data())
            .zip(through_u.data())
        {
            *d += a + b;
        }
        grads.encoder = self.encoder.backward(&cache.encoder, &dh)?.0;
        Ok(grads)
    }

    /// Masked loss over the heads and its gradient with respect to every
    /// parameter. `targets[j]` is `None` for heads that do not train on this bag.
    pub fn loss_and_grad(
        &self,
        tiles: &Matrix,
        targets: &[Option<usize>],
        dropout: &DropoutSpec,
        seed: u64,
    ) -> Result<(f64, BagModel)> {
        let (logits, cache) = self.forward_cached(tiles, dropout, &mut rng_from(seed))?;
        let (loss, dlogits) = masked_loss(&logits, targets)?;
        Ok((loss, self.backward(&cache, &dlogits)?))
    }

    /// Masked loss without gradients, dropout off.
    pub fn loss(&self, tiles: &Matrix, targets: &[Option<usize>]) -> Result<f64> {
        let out = self.forward(tiles, &DropoutSpec::off(), 0)?;
        Ok(masked_loss(&out.logits, targets)?.0)
    }
}

/// Free-function form of [`BagModel::forward`].
pub fn bag_forward(
    model: &BagModel,
    tiles: &Matrix,
    dropout: &DropoutSpec,
    seed: u64,
) -> Result<BagOutput> {
    model.forward(tiles, dropout, seed)
}

impl ParamSet for BagModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.tensors();
        out.push(self.attention.v.data());
        out.push(self.attention.u.data());
        out.push(&self.attention.w);
        for h in &self.heads {
            out.push(h.weight.data());
            out.push(&h.bias);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.tensors_mut();
        out.push(self.attention.v.data_mut());
        out.push(self.attention.u.data_mut());
        out.push(&mut self.attention.w);
        for h in &mut self.heads {
            out.push(h.weight.data_mut());
            out.push(&mut h.bias);
        }
        out
    }

    fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            attention: AttentionParams {
                v: Matrix::zeros(self.attention.v.rows(), self.attention.v.cols()),
                u: Matrix::zeros(self.attention.u.rows(), self.attention.u.cols()),
                w: vec![0.0; self.attention.w.len()],
            },
            heads: self
                .heads
                .iter()
                .map(|h| TaskHead {
                    name: h.name.clone(),
                    weight: Matrix::zeros(h.weight.rows(), h.weight.cols()),
                    bias: vec![0.0; h.bias.len()],
                })
                .collect(),
        }
    }
}

/// Mean cross-entropy over the active heads. Inactive heads get a gradient of
/// exactly zero.
pub fn masked_loss(logits: &[Vec<f64>], targets: &[Option<usize>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} heads but {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let active = targets.iter().filter(|t| t.is_some()).count();
    if active == 0 {
        return Err(Error::InvalidInput("no active task for this bag".into()));
    }
    let scale = 1.0 / active as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, t) in logits.iter().zip(targets) {
        match t {
            Some(t) => {
                let (l, mut g) = cross_entropy(z, *t)?;
                loss += l * scale;
                g.iter_mut().for_each(|v| *v *= scale);
                grads.push(g);
            }
            None => grads.push(vec![0.0; z.len()]),
        }
    }
    Ok((loss, grads))
}

/// The three binary tasks of the suspect subclassifier, in head order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuspectTask {
    HighVsInt,
    HighVsRest,
    IntVsRest,
}

impl SuspectTask {
    pub const ALL: [SuspectTask; 3] = [
        SuspectTask::HighVsInt,
        SuspectTask::HighVsRest,
        SuspectTask::IntVsRest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuspectTask::HighVsInt => "high_vs_int",
            SuspectTask::HighVsRest => "high_vs_rest",
            SuspectTask::IntVsRest => "int_vs_rest",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Which tasks train on each ground-truth group. Binary heads use index 1
/// for the first-named class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TaskMask;

impl TaskMask {
    pub fn targets(&self, group: LabelGroup) -> [Option<usize>; 3] {
        match group {
            LabelGroup::High => [Some(1), Some(1), None],
            LabelGroup::Intermediate => [Some(0), None, Some(1)],
            LabelGroup::Rest => [None, Some(0), Some(0)],
        }
    }

    pub fn active(&self, group: LabelGroup) -> Vec<SuspectTask> {
        let t = self.targets(group);
        SuspectTask::ALL
            .into_iter()
            .filter(|task| t[task.index()].is_some())
            .collect()
    }
}

/// One training bag with its per-head targets.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub tiles: &'a Matrix,
    pub targets: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: usize,
    pub adam: AdamConfig,
    pub dropout: f64,
    /// Bags whose gradients are averaged per optimizer step.
    pub batch_bags: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            patience: 10,
            adam: AdamConfig::default(),
            dropout: 0.5,
            batch_bags: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochLog>,
    /// 0 when no epoch improved on the initial parameters.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

fn check_examples(model: &BagModel, examples: &[Example<'_>], what: &str) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::EmptySplit(what.into()));
    }
    for ex in examples {
        if ex.targets.len() != model.heads.len() {
            return Err(Error::Shape(format!(
                "{} targets for {} heads",
                ex.targets.len(),
                model.heads.len()
            )));
        }
        for (t, h) in ex.targets.iter().zip(&model.heads) {
            if matches!(t, Some(t) if *t >= h.classes()) {
                return Err(Error::InvalidInput(format!(
                    "target out of range for head {}",
                    h.name
                )));
            }
        }
    }
    Ok(())
}

fn check_label_diversity(model: &BagModel, examples: &[Example<'_>]) -> Result<()> {
    for (j, head) in model.heads.iter().enumerate() {
        let mut seen: Vec<usize> = examples.iter().filter_map(|e| e.targets[j]).collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() < 2 {
            return Err(Error::DegenerateLabels(format!(
                "head {} sees {} distinct training label(s)",
                head.name,
                seen.len()
            )));
        }
    }
    Ok(())
}

/// Mean masked loss with dropout off.
pub fn mean_loss(model: &BagModel, examples: &[Example<'_>]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        total += model.loss(ex.tiles, &ex.targets)?;
    }
    Ok(total / examples.len() as f64)
}

/// Train with per-bag Adam steps and keep the parameters with the lowest
/// validation loss.
pub fn fit(
    model: &BagModel,
    train: &[Example<'_>],
    val: &[Example<'_>],
    config: &TrainConfig,
) -> Result<(BagModel, TrainingLog)> {
    check_examples(model, train, "training")?;
    check_examples(model, val, "validation")?;
    check_label_diversity(model, train)?;
    DropoutSpec::train(config.dropout).validate()?;
    let batch = config.batch_bags.max(1);

    let mut current = model.clone();
    let mut state = AdamState::new(&current, config.adam);
    let initial = mean_loss(&current, val)?;
    let mut log = TrainingLog {
        initial_val_loss: initial,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: initial,
        stopped_early: false,
    };
    let mut best = current.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let dropout = DropoutSpec::train(config.dropout);

    for epoch in 1..=config.max_epochs {
        let epoch_seed = derive(config.seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng_from(epoch_seed));
        let mut acc = current.zeros_like();
        let mut pending = 0usize;
        let mut train_loss = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let ex = &train[i];
            let (loss, grads) =
                current.loss_and_grad(ex.tiles, &ex.targets, &dropout, derive(epoch_seed, step as u64))?;
            train_loss += loss;
            acc.accumulate(&grads);
            pending += 1;
            if pending == batch || step + 1 == order.len() {
                if pending > 1 {
                    acc.scale(1.0 / pending as f64);
                }
                adam_step(&mut current, &acc, &mut state)?;
                acc = current.zeros_like();
                pending = 0;
            }
        }
        let val_loss = mean_loss(&current, val)?;
        let train_loss = train_loss / train.len() as f64;
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best.clone_from(&current);
        } else if epoch - log.best_epoch >= config.patience {
            log.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, Activation, Dense, GradCheckOptions};
    use rand::Rng as _;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from(seed);
        let data = (0..rows * cols).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn suspect_heads() -> Vec<HeadSpec> {
        SuspectTask::ALL.iter().map(|t| HeadSpec::new(t.name(), 2)).collect()
    }

    #[test]
    fn singleton_bag_pools_to_its_tile() {
        let mut rng = rng_from(1);
        let att = AttentionParams::new(5, 3, &mut rng);
        let h = random_matrix(1, 5, 2);
        let (pooled, weights) = attention_pool(&h, &att).unwrap();
        assert_eq!(weights, vec![1.0]);
        assert_eq!(pooled.as_slice(), h.row(0));
    }

    #[test]
    fn identical_tiles_share_weight() {
        let mut rng = rng_from(1);
        let att = AttentionParams::new(4, 3, &mut rng);
        let row = vec![0.3, -0.2, 0.9, 0.1];
        let h = Matrix::from_rows(&[row.clone(), row]).unwrap();
        let (_, weights) = attention_pool(&h, &att).unwrap();
        assert_eq!(weights, vec![0.5, 0.5]);
    }

    #[test]
    fn empty_bag_is_rejected() {
        let mut rng = rng_from(1);
        let att = AttentionParams::new(4, 3, &mut rng);
        assert!(matches!(
            attention_pool(&Matrix::zeros(0, 4), &att),
            Err(Error::EmptyBag)
        ));
    }

    #[test]
    fn pooling_ignores_tile_order() {
        let mut rng = rng_from(3);
        let att = AttentionParams::new(6, 4, &mut rng);
        for seed in 0..50 {
            let h = random_matrix(9, 6, seed);
            let mut perm: Vec<usize> = (0..9).collect();
            perm.shuffle(&mut rng);
            let (a, wa) = attention_pool(&h, &att).unwrap();
            let (b, wb) = attention_pool(&h.select_rows(&perm), &att).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
            for (k, &p) in perm.iter().enumerate() {
                assert!((wb[k] - wa[p]).abs() < 1e-12);
            }
            assert!((wa.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_heads_give_uniform_probabilities() {
        let mut model = BagModel::new(
            &ModelDims::reduced(),
            &[HeadSpec::new("a", 2), HeadSpec::new("b", 4)],
            4,
        )
        .unwrap();
        for h in &mut model.heads {
            h.weight = Matrix::zeros(h.weight.rows(), h.weight.cols());
        }
        let out = model.forward(&random_matrix(7, 32, 5), &DropoutSpec::off(), 0).unwrap();
        assert_eq!(out.probs[0], vec![0.5, 0.5]);
        assert_eq!(out.probs[1], vec![0.25; 4]);
    }

    #[test]
    fn forward_without_dropout_is_repeatable() {
        let model = BagModel::new(&ModelDims::reduced(), &suspect_heads(), 4).unwrap();
        let x = random_matrix(7, 32, 5);
        let a = model.forward(&x, &DropoutSpec::off(), 1).unwrap();
        let b = model.forward(&x, &DropoutSpec::off(), 2).unwrap();
        assert_eq!(a, b);
        for p in &a.probs {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            model.forward(&random_matrix(3, 31, 5), &DropoutSpec::off(), 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn hand_sized_bag_matches_manual_trace() {
        // dim 4, one linear layer then one relu layer, attention width 2
        let l1 = Dense {
            weight: Matrix::from_rows(&[
                vec![0.5, -0.25, 0.0, 1.0],
                vec![0.1, 0.2, 0.3, -0.4],
                vec![-1.0, 0.0, 0.5, 0.5],
            ])
            .unwrap(),
            bias: vec![0.1, -0.2, 0.0],
            activation: Activation::Identity,
        };
        let l2 = Dense {
            weight: Matrix::from_rows(&[vec![1.0, -1.0, 0.5], vec![0.25, 0.75, -0.5]]).unwrap(),
            bias: vec![0.05, 0.1],
            activation: Activation::Relu,
        };
        let model = BagModel {
            encoder: Mlp {
                layers: vec![l1.clone(), l2.clone()],
            },
            attention: AttentionParams {
                v: Matrix::from_rows(&[vec![0.3, -0.6], vec![0.9, 0.2]]).unwrap(),
                u: Matrix::from_rows(&[vec![-0.4, 0.7], vec![0.1, 0.1]]).unwrap(),
                w: vec![1.5, -0.8],
            },
            heads: vec![TaskHead {
                name: "t".into(),
                weight: Matrix::from_rows(&[vec![0.6, -0.3], vec![-0.2, 0.4]]).unwrap(),
                bias: vec![0.0, 0.1],
            }],
        };
        let tiles = [
            [1.0, 0.0, -1.0, 2.0],
            [0.5, 0.5, 0.5, 0.5],
            [-1.0, 2.0, 0.0, 1.0],
        ];
        let x = Matrix::from_rows(&tiles.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let out = model.forward(&x, &DropoutSpec::off(), 0).unwrap();

        let dense = |l: &Dense, x: &[f64], relu: bool| -> Vec<f64> {
            (0..l.out_dim())
                .map(|o| {
                    let mut s = l.bias[o];
                    for i in 0..l.in_dim() {
                        s += l.weight.get(o, i) * x[i];
                    }
                    if relu {
                        s.max(0.0)
                    } else {
                        s
                    }
                })
                .collect()
        };
        let hs: Vec<Vec<f64>> = tiles
            .iter()
            .map(|t| dense(&l2, &dense(&l1, t, false), true))
            .collect();
        let scores: Vec<f64> = hs
            .iter()
            .map(|h| {
                let mut s = 0.0;
                for k in 0..2 {
                    let zv = model.attention.v.get(k, 0) * h[0] + model.attention.v.get(k, 1) * h[1];
                    let zu = model.attention.u.get(k, 0) * h[0] + model.attention.u.get(k, 1) * h[1];
                    s += model.attention.w[k] * zv.tanh() / (1.0 + (-zu).exp());
                }
                s
            })
            .collect();
        let denom: f64 = scores.iter().map(|s| s.exp()).sum();
        let a: Vec<f64> = scores.iter().map(|s| s.exp() / denom).collect();
        let pooled: Vec<f64> = (0..2).map(|c| (0..3).map(|i| a[i] * hs[i][c]).sum()).collect();
        let z: Vec<f64> = (0..2)
            .map(|o| {
                model.heads[0].bias[o]
                    + model.heads[0].weight.get(o, 0) * pooled[0]
                    + model.heads[0].weight.get(o, 1) * pooled[1]
            })
            .collect();
        let p1 = 1.0 / (1.0 + (z[0] - z[1]).exp());
        for i in 0..3 {
            assert!((out.weights[i] - a[i]).abs() < 1e-12);
        }
        assert!((out.probs[0][1] - p1).abs() < 1e-12);
        assert!((out.probs[0][0] - (1.0 - p1)).abs() < 1e-12);
    }

    #[test]
    fn mask_targets_follow_groups() {
        let m = TaskMask;
        assert_eq!(
            m.active(LabelGroup::High),
            vec![SuspectTask::HighVsInt, SuspectTask::HighVsRest]
        );
        assert_eq!(
            m.active(LabelGroup::Rest),
            vec![SuspectTask::HighVsRest, SuspectTask::IntVsRest]
        );
        assert_eq!(
            m.active(LabelGroup::Intermediate),
            vec![SuspectTask::HighVsInt, SuspectTask::IntVsRest]
        );
    }

    #[test]
    fn uniform_outputs_cost_ln2_for_every_group() {
        let logits = vec![vec![0.0, 0.0]; 3];
        for g in [LabelGroup::High, LabelGroup::Intermediate, LabelGroup::Rest] {
            let (loss, grads) = masked_loss(&logits, &TaskMask.targets(g)).unwrap();
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
            let inactive = TaskMask.targets(g).iter().position(Option::is_none).unwrap();
            assert!(grads[inactive].iter().all(|v| v.to_bits() == 0));
        }
    }

    #[test]
    fn inactive_head_parameters_get_zero_gradient() {
        let model = BagModel::new(&ModelDims::reduced(), &suspect_heads(), 6).unwrap();
        let x = random_matrix(5, 32, 7);
        let (_, grads) = model
            .loss_and_grad(&x, &TaskMask.targets(LabelGroup::High), &DropoutSpec::off(), 0)
            .unwrap();
        let idle = &grads.heads[SuspectTask::IntVsRest.index()];
        assert!(idle.weight.data().iter().chain(&idle.bias).all(|v| v.to_bits() == 0));
    }

    #[test]
    fn full_model_gradient_check() {
        let model = BagModel::new(&ModelDims::reduced(), &suspect_heads(), 8).unwrap();
        let x = random_matrix(6, 32, 9);
        let targets = TaskMask.targets(LabelGroup::Intermediate);
        let report = grad_check(
            &model,
            &DropoutSpec::off(),
            |p: &BagModel, d| p.loss_and_grad(&x, &targets, d, 0),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.checked, model.param_count());
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn fit_rejects_single_label_training_sets() {
        let model = BagModel::new(&ModelDims::reduced(), &[HeadSpec::new("b", 2)], 1).unwrap();
        let x = random_matrix(3, 32, 1);
        let train = vec![
            Example {
                tiles: &x,
                targets: vec![Some(1)],
            };
            3
        ];
        let r = fit(&model, &train, &train, &TrainConfig::default());
        assert!(matches!(r, Err(Error::DegenerateLabels(_))));
        let r = fit(&model, &[], &train, &TrainConfig::default());
        assert!(matches!(r, Err(Error::EmptySplit(_))));
    }

    #[test]
    fn zero_epochs_keep_weights_and_reruns_are_bit_identical() {
        let model = BagModel::new(&ModelDims::reduced(), &[HeadSpec::new("b", 2)], 1).unwrap();
        let xs: Vec<Matrix> = (0..6).map(|s| random_matrix(4, 32, s)).collect();
        let examples: Vec<Example> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Example {
                tiles: x,
                targets: vec![Some(i % 2)],
            })
            .collect();
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let (same, log) = fit(&model, &examples, &examples, &cfg).unwrap();
        assert_eq!(same, model);
        assert_eq!(log.best_epoch, 0);

        let cfg = TrainConfig {
            max_epochs: 3,
            seed: 5,
            batch_bags: 2,
            ..TrainConfig::default()
        };
        let (a, _) = fit(&model, &examples, &examples, &cfg).unwrap();
        let (b, _) = fit(&model, &examples, &examples, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
