use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use super::{Matrix, ParamSet};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    McSample,
    Off,
}

/// Dropout applied after every ReLU. One mask is drawn per forward call and
/// shared by all rows: a call evaluates one thinned network on one bag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: DropoutMode,
}

impl DropoutSpec {
    pub fn off() -> Self {
        Self {
            rate: 0.0,
            mode: DropoutMode::Off,
        }
    }

    pub fn train(rate: f64) -> Self {
        Self {
            rate,
            mode: DropoutMode::Train,
        }
    }

    pub fn mc_sample(rate: f64) -> Self {
        Self {
            rate,
            mode: DropoutMode::McSample,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::InvalidInput(format!(
                "dropout rate must be in [0, 1), got {}",
                self.rate
            )));
        }
        Ok(())
    }

    /// Whether masks are drawn at all.
    pub fn is_stochastic(&self) -> bool {
        self.mode != DropoutMode::Off
    }

    fn scale(&self) -> f64 {
        1.0 / (1.0 - self.rate)
    }

    fn sample_mask(&self, width: usize, rng: &mut Rng) -> Vec<bool> {
        (0..width).map(|_| rng.random::<f64>() >= self.rate).collect()
    }
}

/// Fully-connected layer `y = act(x Wᵀ + b)` with `W` shaped `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Scaled-uniform init in `±sqrt(6 / (in + out))`, zero bias.
    pub fn glorot(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let data = (0..input * output).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Matrix::from_vec(output, input, data).expect("sized"),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn affine(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul_t(&self.weight)?;
        z.add_row_vector(&self.bias);
        Ok(z)
    }
}

fn relu_inplace(m: &mut Matrix) {
    m.map_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

fn apply_mask(m: &mut Matrix, mask: &[bool], scale: f64) {
    for r in 0..m.rows() {
        for (x, &keep) in m.row_mut(r).iter_mut().zip(mask) {
            *x = if keep { *x * scale } else { 0.0 };
        }
    }
}

fn kept(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Everything backward needs from one forward call.
#[derive(Debug, Clone)]
pub struct MlpCache {
    shapes: Vec<(usize, usize)>,
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    masks: Vec<Option<Vec<bool>>>,
    scale: f64,
}

/// Activations up to (and including) the first ReLU, before any dropout.
/// Deterministic, so Monte Carlo passes can share it.
#[derive(Debug, Clone)]
pub struct MlpPrefix {
    next_layer: usize,
    activations: Matrix,
    ends_in_relu: bool,
}

impl Mlp {
    pub fn new(in_dim: usize, widths: &[usize], activations: &[Activation], rng: &mut Rng) -> Self {
        assert_eq!(widths.len(), activations.len());
        let mut prev = in_dim;
        let layers = widths
            .iter()
            .zip(activations)
            .map(|(&w, &a)| {
                let layer = Dense::glorot(prev, w, a, rng);
                prev = w;
                layer
            })
            .collect();
        Self { layers }
    }

    /// Tile encoder: a linear input layer followed by ReLU layers.
    pub fn encoder(in_dim: usize, widths: &[usize], rng: &mut Rng) -> Self {
        let acts: Vec<Activation> = (0..widths.len())
            .map(|i| {
                if i == 0 {
                    Activation::Identity
                } else {
                    Activation::Relu
                }
            })
            .collect();
        Self::new(in_dim, widths, &acts, rng)
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::out_dim)
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Dense::out_dim).collect()
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        input: &Matrix,
        dropout: &DropoutSpec,
        seed: u64,
    ) -> Result<(Matrix, MlpCache)> {
        self.forward_with_rng(input, dropout, &mut rng_from(seed))
    }

    pub fn forward_with_rng(
        &self,
        input: &Matrix,
        dropout: &DropoutSpec,
        rng: &mut Rng,
    ) -> Result<(Matrix, MlpCache)> {
        self.check_input(input)?;
        dropout.validate()?;
        let n = self.layers.len();
        let mut cache = MlpCache {
            shapes: self.layers.iter().map(|l| l.weight.shape()).collect(),
            inputs: Vec::with_capacity(n),
            pre_activations: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
            scale: dropout.scale(),
        };
        let mut x = input.clone();
        for layer in &self.layers {
            let z = layer.affine(&x)?;
            let mut a = z.clone();
            let mut mask = None;
            if layer.activation == Activation::Relu {
                relu_inplace(&mut a);
                if dropout.is_stochastic() {
                    let m = dropout.sample_mask(layer.out_dim(), rng);
                    apply_mask(&mut a, &m, cache.scale);
                    mask = Some(m);
                }
            }
            cache.inputs.push(std::mem::replace(&mut x, a));
            cache.pre_activations.push(z);
            cache.masks.push(mask);
        }
        Ok((x, cache))
    }

    /// Reverse pass: gradients shaped like `self` plus the input gradient.
    pub fn backward(&self, cache: &MlpCache, upstream: &Matrix) -> Result<(Mlp, Matrix)> {
        let shapes: Vec<_> = self.layers.iter().map(|l| l.weight.shape()).collect();
        if shapes != cache.shapes {
            return Err(Error::InvalidCache(
                "layer shapes differ from the forward call".into(),
            ));
        }
        let rows = cache.inputs.first().map_or(0, Matrix::rows);
        if upstream.shape() != (rows, self.out_dim()) {
            return Err(Error::InvalidCache(format!(
                "upstream gradient is {:?}, forward output was {:?}",
                upstream.shape(),
                (rows, self.out_dim())
            )));
        }
        let mut grads = self.zeros_like();
        let mut g = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if let Some(mask) = &cache.masks[l] {
                apply_mask(&mut g, mask, cache.scale);
            }
            if layer.activation == Activation::Relu {
                let z = &cache.pre_activations[l];
                for (gv, zv) in g.data_mut().iter_mut().zip(z.data()) {
                    if *zv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            grads.layers[l].weight = g.t_matmul(&cache.inputs[l])?;
            grads.layers[l].bias = g.column_sums();
            g = g.matmul(&layer.weight)?;
        }
        Ok((grads, g))
    }

    /// Deterministic part of the network, shared across Monte Carlo passes.
    pub fn prefix(&self, input: &Matrix) -> Result<MlpPrefix> {
        self.check_input(input)?;
        let mut x = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            x = layer.affine(&x)?;
            if layer.activation == Activation::Relu {
                relu_inplace(&mut x);
                return Ok(MlpPrefix {
                    next_layer: l + 1,
                    activations: x,
                    ends_in_relu: true,
                });
            }
        }
        Ok(MlpPrefix {
            next_layer: self.layers.len(),
            activations: x,
            ends_in_relu: false,
        })
    }

    /// Finish an inference pass from a prefix, skipping dropped units. Draws
    /// masks in the same order as [`Mlp::forward_with_rng`], so results
    /// match a full forward call made with the same stream.
    pub fn infer_suffix(
        &self,
        prefix: &MlpPrefix,
        dropout: &DropoutSpec,
        rng: &mut Rng,
    ) -> Result<Matrix> {
        dropout.validate()?;
        let last = self.layers.len();
        let scale = dropout.scale();
        if !(dropout.is_stochastic() && prefix.ends_in_relu) {
            let mut x = prefix.activations.clone();
            for layer in &self.layers[prefix.next_layer..] {
                x = layer.affine(&x)?;
                if layer.activation == Activation::Relu {
                    relu_inplace(&mut x);
                }
            }
            return Ok(x);
        }

        let mask = dropout.sample_mask(prefix.activations.cols(), rng);
        if prefix.next_layer == last {
            let mut out = prefix.activations.clone();
            apply_mask(&mut out, &mask, scale);
            return Ok(out);
        }
        let mut cols = kept(&mask);
        let mut x = prefix.activations.select_columns(&cols);
        x.map_inplace(|v| v * scale);
        for l in prefix.next_layer..last {
            let layer = &self.layers[l];
            let w = layer.weight.select_columns(&cols);
            let mut z = x.matmul_t(&w)?;
            z.add_row_vector(&layer.bias);
            if layer.activation == Activation::Relu {
                relu_inplace(&mut z);
                let mask = dropout.sample_mask(layer.out_dim(), rng);
                if l + 1 == last {
                    apply_mask(&mut z, &mask, scale);
                    return Ok(z);
                }
                cols = kept(&mask);
                x = z.select_columns(&cols);
                x.map_inplace(|v| v * scale);
            } else {
                cols = (0..layer.out_dim()).collect();
                x = z;
            }
        }
        Ok(x)
    }

    /// Forward pass without a cache.
    pub fn infer(&self, input: &Matrix, dropout: &DropoutSpec, seed: u64) -> Result<Matrix> {
        let prefix = self.prefix(input)?;
        self.infer_suffix(&prefix, dropout, &mut rng_from(seed))
    }
}

impl ParamSet for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![0.0; l.out_dim()],
                    activation: l.activation,
                })
                .collect(),
        }
    }
}
