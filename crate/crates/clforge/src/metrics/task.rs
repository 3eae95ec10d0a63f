//! Exact-match task metrics.

use crate::error::{Error, Result};

/// EM@k: percentage of cases whose truth token appears among the first k
/// ranked candidates.
pub fn em_at_k(candidates: &[Vec<String>], truths: &[String], k: usize) -> Result<f64> {
    if candidates.is_empty() || candidates.len() != truths.len() {
        return Err(Error::Data(format!(
            "em_at_k: {} candidate lists vs {} truths",
            candidates.len(),
            truths.len()
        )));
    }
    for (i, list) in candidates.iter().enumerate() {
        if list.len() < k {
            return Err(Error::Data(format!(
                "em_at_k: candidate list {i} has {} entries, k = {k}",
                list.len()
            )));
        }
    }
    let hits = candidates
        .iter()
        .zip(truths)
        .filter(|(list, truth)| list[..k].iter().any(|c| c == *truth))
        .count();
    Ok(100.0 * hits as f64 / truths.len() as f64)
}

/// Percentage of prediction/truth pairs with identical token sequences.
pub fn exact_match(preds: &[Vec<String>], truths: &[Vec<String>]) -> Result<f64> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::Data(format!(
            "exact_match: {} preds vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}
