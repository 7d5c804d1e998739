//! Softmax cross-entropy over a batch of logits.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax (max-subtracted for stability).
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (n, k) = logits.dims2("softmax logits")?;
    let mut out = Tensor::zeros(&[n, k]);
    for row in 0..n {
        let z = &logits.data()[row * k..(row + 1) * k];
        let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f64;
        for &v in z {
            denom += ((v - max) as f64).exp();
        }
        let o = &mut out.data_mut()[row * k..(row + 1) * k];
        for (ov, &v) in o.iter_mut().zip(z) {
            *ov = (((v - max) as f64).exp() / denom) as f32;
        }
    }
    Ok(out)
}

/// Mean of `-log softmax(logits)[label]` over the batch, plus the gradient
/// `(softmax - onehot) / N` with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let (n, k) = logits.dims2("cross-entropy logits")?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "cross-entropy: {} logit rows but {} labels",
            n,
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidData(format!(
            "cross-entropy: label {bad} out of range for {k} classes"
        )));
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0f64;
    for (row, &label) in labels.iter().enumerate() {
        let z = &logits.data()[row * k..(row + 1) * k];
        let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let log_denom: f64 = z
            .iter()
            .map(|&v| ((v - max) as f64).exp())
            .sum::<f64>()
            .ln();
        loss += log_denom - (z[label] - max) as f64;
    }
    let mut grad = probs;
    let inv_n = 1.0 / n as f32;
    for (row, &label) in labels.iter().enumerate() {
        let g = &mut grad.data_mut()[row * k..(row + 1) * k];
        g[label] -= 1.0;
        for v in g.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok(((loss / n as f64) as f32, grad))
}
