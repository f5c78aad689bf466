use ndarray::ArrayView1;

use crate::autodiff::Mat;
use crate::error::{Result, StagError};

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(StagError::dims("cosine operands", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(StagError::Degenerate("cosine of a zero-norm vector".into()));
    }
    Ok(a.dot(&b) / (na * nb))
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the row of `unit_rows` most cosine-similar to `z`; ties resolve to
/// the lowest index. Rows must already have unit norm.
pub fn nearest_by_cosine(z: ArrayView1<f64>, unit_rows: &Mat) -> Result<usize> {
    if z.len() != unit_rows.ncols() {
        return Err(StagError::dims("vector vs codebook dim", unit_rows.ncols(), z.len()));
    }
    let n = norm(z);
    if n == 0.0 {
        return Err(StagError::Degenerate("zero-norm vector".into()));
    }
    let sims = unit_rows.dot(&z).to_vec();
    Ok(argmax(&sims))
}

/// Stable softmax of `logits`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
