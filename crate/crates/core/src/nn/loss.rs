use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of `(N, K, 1, 1)` logits, max-subtracted, f64 internally.
pub fn softmax(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.shape().sample_len();
    logits
        .data()
        .chunks(k.max(1))
        .take(logits.shape().n)
        .map(softmax_row)
        .collect()
}

pub(crate) fn softmax_row(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over the batch and its gradient `(softmax − onehot)/N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let shape = logits.shape();
    let k = shape.sample_len();
    if labels.len() != shape.n {
        return Err(Error::Shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            shape.n
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidLabel { label, num_classes: k });
    }
    let mut grad = Tensor::zeros(shape);
    let mut loss = 0.0f64;
    let inv_n = 1.0 / shape.n.max(1) as f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.sample(i);
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label] as f64;
        for (j, g) in grad.sample_mut(i).iter_mut().enumerate() {
            let p = (row[j] as f64 - log_z).exp();
            let onehot = if j == label { 1.0 } else { 0.0 };
            *g = ((p - onehot) * inv_n) as f32;
        }
    }
    Ok((loss * inv_n, grad))
}
