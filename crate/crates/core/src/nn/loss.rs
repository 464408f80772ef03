use super::Matrix;
use crate::error::{Error, Result};

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log softmax(logits)[target]`, computed without forming the probabilities.
fn log_prob(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits[target] - lse
}

/// Mean cross-entropy over rows and its gradient `(softmax − onehot) / n`.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    if targets.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} targets for {} rows",
            targets.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::InvalidInput(format!(
            "target {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        loss -= log_prob(row, t);
        let p = softmax(row);
        for (c, (g, pc)) in grad.row_mut(r).iter_mut().zip(p).enumerate() {
            *g = (pc - if c == t { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Single-example convenience wrapper: loss and logit gradient.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    let m = Matrix::from_vec(1, logits.len(), logits.to_vec())?;
    let (loss, g) = softmax_cross_entropy(&m, &[target])?;
    Ok((loss, g.into_vec()))
}
