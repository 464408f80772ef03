//! Minimal dense network engine: matrices, fully-connected layers with ReLU
//! and dropout, softmax cross-entropy, Adam and finite-difference checks.

mod adam;
pub mod gradcheck;
mod loss;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use loss::{cross_entropy, softmax, softmax_cross_entropy};
pub use matrix::Matrix;
pub use mlp::{Activation, Dense, DropoutMode, DropoutSpec, Mlp, MlpCache, MlpPrefix};

/// A model whose parameters can be viewed as a flat list of tensors.
/// Gradients use the same type, so optimizers and checkers stay generic.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    fn zeros_like(&self) -> Self;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t {
                *x *= factor;
            }
        }
    }
}
