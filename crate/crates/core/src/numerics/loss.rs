use crate::error::{Error, Result};

use super::dense::DenseMatrix;

/// Mean softmax cross-entropy over rows.
///
/// Classes with `mask[c] == false` are treated as having a `-inf` logit: they
/// get zero probability and zero gradient. Returns the loss and `dL/dlogits`.
pub fn cross_entropy(logits: &DenseMatrix, labels: &[usize], mask: Option<&[bool]>) -> Result<(f64, DenseMatrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::shape("cross_entropy labels", n, labels.len()));
    }
    if n == 0 {
        return Err(Error::Empty("cross_entropy rows"));
    }
    if let Some(m) = mask {
        if m.len() != c {
            return Err(Error::shape("cross_entropy mask", c, m.len()));
        }
    }
    let allowed = |j: usize| mask.is_none_or(|m| m[j]);
    let mut grad = DenseMatrix::zeros(n, c);
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c || !allowed(y) {
            return Err(Error::Invalid(format!("label {y} of row {i} is outside the unmasked classes")));
        }
        let row = logits.row(i);
        let max = (0..c).filter(|&j| allowed(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..c).filter(|&j| allowed(j)).map(|j| (row[j] - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y];
        let g = grad.row_mut(i);
        for j in (0..c).filter(|&j| allowed(j)) {
            g[j] = (row[j] - log_z).exp() * inv_n;
        }
        g[y] -= inv_n;
    }
    let loss = total * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss, grad))
}

/// Softmax of `row / temperature` restricted to `cols`, in `cols` order.
pub fn softmax_subset(row: &[f64], cols: &[usize], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = cols.iter().map(|&j| row[j] / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
