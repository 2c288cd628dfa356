use crate::error::{Error, Result};

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

/// Neumaier-compensated sum; exact to within a couple of ulps of the result
/// regardless of how many terms are added.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxCe {
    pub probs: Vec<f64>,
    pub loss: f64,
    /// `probs - onehot(target)`.
    pub grad: Vec<f64>,
}

pub fn softmax_crossentropy(logits: &[f64], target: usize) -> Result<SoftmaxCe> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax_crossentropy: empty logits"));
    }
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "softmax_crossentropy: target {target} out of range for {} logits",
            logits.len()
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("softmax_crossentropy: non-finite logits"));
    }
    let probs = softmax(logits);
    let loss = -log_softmax(logits)[target];
    let mut grad = probs.clone();
    grad[target] -= 1.0;
    Ok(SoftmaxCe { probs, loss, grad })
}
