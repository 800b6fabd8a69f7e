use crate::{Error, Result};

/// Added inside the cross-entropy logarithm.
pub const CE_CLAMP: f64 = 1e-12;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

/// Max-subtracted softmax.
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs.get(target).ok_or_else(|| {
        Error::invalid(format!(
            "target index {target} out of range for {} classes",
            probs.len()
        ))
    })?;
    Ok(-(p + CE_CLAMP).ln())
}

/// Gradient of [`cross_entropy`] of `softmax(logits)` with respect to the
/// logits, accumulated into `out`, scaled by `weight`.
///
/// With the clamp the exact derivative is `c (p - onehot)` where
/// `c = p_y / (p_y + CE_CLAMP)`.
pub fn cross_entropy_grad(probs: &[f64], target: usize, weight: f64, out: &mut [f64]) {
    let c = weight * probs[target] / (probs[target] + CE_CLAMP);
    for (o, p) in out.iter_mut().zip(probs) {
        *o += c * p;
    }
    out[target] -= c;
}

pub fn mse(prediction: f64, target: f64) -> f64 {
    let d = prediction - target;
    d * d
}
