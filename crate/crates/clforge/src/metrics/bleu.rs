//! Corpus-level BLEU with n-grams up to 4, add-one smoothing on zero
//! higher-order counts, and a multiplicative brevity penalty.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_NGRAM: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matched and total candidate n-gram mass, weighted per gram.
fn weighted_counts<W>(
    preds: &[Vec<String>],
    truths: &[Vec<String>],
    n: usize,
    weight: &W,
) -> (f64, f64)
where
    W: Fn(&[String]) -> f64,
{
    let mut matched = 0.0;
    let mut total = 0.0;
    for (pred, truth) in preds.iter().zip(truths) {
        let cand = ngram_counts(pred, n);
        let refs = ngram_counts(truth, n);
        for (gram, &count) in &cand {
            let w = weight(gram);
            let clipped = count.min(refs.get(gram).copied().unwrap_or(0));
            matched += w * clipped as f64;
            total += w * count as f64;
        }
    }
    (matched, total)
}

/// Shared scoring core for plain and weighted BLEU, in [0, 100].
pub fn bleu_weighted<W>(preds: &[Vec<String>], truths: &[Vec<String>], weight: &W) -> Result<f64>
where
    W: Fn(&[String]) -> f64,
{
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::Data(format!(
            "bleu: {} preds vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let cand_len: usize = preds.iter().map(Vec::len).sum();
    let ref_len: usize = truths.iter().map(Vec::len).sum();
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=MAX_NGRAM {
        let (matched, total) = weighted_counts(preds, truths, n, weight);
        if total == 0.0 {
            continue; // no candidate n-grams of this order
        }
        let p = if matched > 0.0 {
            matched / total
        } else if n == 1 {
            return Ok(0.0); // zero unigram overlap
        } else {
            // add-one smoothing on zero higher-order counts
            1.0 / (total + 1.0)
        };
        log_sum += p.ln();
        orders += 1;
    }
    if orders == 0 {
        return Ok(0.0);
    }
    let precision = (log_sum / orders as f64).exp();
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * bp * precision)
}

/// Corpus BLEU over prediction/truth token-sequence pairs.
pub fn bleu(preds: &[Vec<String>], truths: &[Vec<String>]) -> Result<f64> {
    bleu_weighted(preds, truths, &|_gram: &[String]| 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_corpora_score_100() {
        let c = vec![toks("a b c d"), toks("x y")];
        let score = bleu(&c, &c).unwrap();
        assert!((score - 100.0).abs() < 1e-9, "score {score}");
    }

    #[test]
    fn zero_unigram_overlap_scores_zero() {
        let preds = vec![toks("p q r")];
        let truths = vec![toks("a b c")];
        let score = bleu(&preds, &truths).unwrap();
        assert!(score < 5.0);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn golden_short_candidate() {
        // pred "a b" vs truth "a b c d": p1 = p2 = 1, higher orders have no
        // candidate grams, BP = exp(1 - 4/2) = exp(-1).
        let preds = vec![toks("a b")];
        let truths = vec![toks("a b c d")];
        let score = bleu(&preds, &truths).unwrap();
        let expected = 100.0 * (-1.0f64).exp();
        assert!((score - expected).abs() < 1e-9, "score {score} vs {expected}");
    }

    #[test]
    fn corpus_order_is_irrelevant() {
        let preds = vec![toks("a b c"), toks("d e"), toks("f g h i")];
        let truths = vec![toks("a b x"), toks("d e"), toks("f h g i")];
        let swapped_preds = vec![preds[2].clone(), preds[0].clone(), preds[1].clone()];
        let swapped_truths = vec![truths[2].clone(), truths[0].clone(), truths[1].clone()];
        let a = bleu(&preds, &truths).unwrap();
        let b = bleu(&swapped_preds, &swapped_truths).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
