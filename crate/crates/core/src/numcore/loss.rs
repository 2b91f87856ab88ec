use super::Scalar;
use crate::error::{Error, Result};

#[inline]
pub(crate) fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    let s: S = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Mean over masked positions of the binary cross-entropy between
/// `sigmoid(logits)` and `targets`, evaluated as
/// `max(l, 0) - l·t + ln(1 + e^{-|l|})`.
pub fn bce_with_logits<S: Scalar>(logits: &[S], targets: &[S], mask: &[S]) -> Result<S> {
    if logits.len() != targets.len() || logits.len() != mask.len() {
        return Err(Error::Dimension {
            op: "bce_with_logits",
            left: (logits.len(), 1),
            right: (targets.len(), mask.len()),
        });
    }
    let count: S = mask.iter().copied().sum();
    if count <= S::zero() {
        return Err(Error::EmptyLoss);
    }
    let total: S = logits
        .iter()
        .zip(targets)
        .zip(mask)
        .map(|((&l, &t), &m)| m * (l.max(S::zero()) - l * t + (-l.abs()).exp().ln_1p()))
        .sum();
    Ok(total / count)
}

/// `-ln softmax(logits)[target]`.
pub fn softmax_ce<S: Scalar>(logits: &[S], target: usize) -> Result<S> {
    if target >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: logits.len(),
        });
    }
    Ok(log_sum_exp(logits) - logits[target])
}
