use rand::seq::index::sample;

use super::{DropoutSpec, ParamSet};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check a seeded sample of coordinates instead of all of them.
    pub max_samples: Option<usize>,
    pub seed: u64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub denominator_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_samples: None,
            seed: 0,
            denominator_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// (tensor, index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

/// Compare analytic gradients from `loss_and_grad` with central differences.
pub fn grad_check<P, F>(
    params: &P,
    dropout: &DropoutSpec,
    loss_and_grad: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    P: ParamSet + Clone,
    F: Fn(&P, &DropoutSpec) -> Result<(f64, P)>,
{
    if dropout.is_stochastic() {
        return Err(Error::NonDeterministicClosure);
    }
    let (loss, analytic) = loss_and_grad(params, dropout)?;
    let (again, _) = loss_and_grad(params, dropout)?;
    if loss.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministicClosure);
    }

    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let coords: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| (0..n).map(move |i| (t, i)))
        .collect();
    let chosen: Vec<(usize, usize)> = match opts.max_samples {
        Some(k) if k < coords.len() => {
            let mut rng = rng_from(opts.seed);
            let mut idx = sample(&mut rng, coords.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| coords[i]).collect()
        }
        _ => coords,
    };

    let analytic = analytic.tensors();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut probe = params.clone();
    for (t, i) in chosen {
        let original = probe.tensors()[t][i];
        probe.tensors_mut()[t][i] = original + opts.step;
        let (plus, _) = loss_and_grad(&probe, dropout)?;
        probe.tensors_mut()[t][i] = original - opts.step;
        let (minus, _) = loss_and_grad(&probe, dropout)?;
        probe.tensors_mut()[t][i] = original;

        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic[t][i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(opts.denominator_floor);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(rel);
            report.worst = Some((t, i));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Matrix, Mlp};

    #[test]
    fn linear_regression_toy() {
        let mut rng = rng_from(2);
        let net = Mlp::new(3, &[1], &[Activation::Identity], &mut rng);
        let x = Matrix::from_rows(&[
            vec![1.0, 2.0, -1.0],
            vec![0.5, -0.3, 0.8],
            vec![-1.2, 0.4, 0.1],
        ])
        .unwrap();
        let y = [0.7, -0.2, 1.1];
        let report = grad_check(
            &net,
            &DropoutSpec::off(),
            |p: &Mlp, d| {
                let (out, cache) = p.forward(&x, d, 0)?;
                let mut g = out.clone();
                let mut loss = 0.0;
                for (r, target) in y.iter().enumerate() {
                    let e = out.get(r, 0) - target;
                    loss += e * e / 3.0;
                    g.set(r, 0, 2.0 * e / 3.0);
                }
                Ok((loss, p.backward(&cache, &g)?.0))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 4);
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn stochastic_closure_is_rejected() {
        let mut rng = rng_from(2);
        let net = Mlp::encoder(3, &[2, 2], &mut rng);
        let result = grad_check(
            &net,
            &DropoutSpec::train(0.5),
            |p: &Mlp, _| Ok((0.0, p.clone())),
            &GradCheckOptions::default(),
        );
        assert!(matches!(result, Err(Error::NonDeterministicClosure)));
    }
}
