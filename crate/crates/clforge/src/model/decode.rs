//! Task-level decoding: ranked next-token candidates and greedy API usage
//! generation.

use crate::error::{Error, Result};
use crate::model::forward::{clip_window, next_logits};
use crate::model::state::ModelState;
use crate::model::vocab::{Vocab, EOS};
use crate::numcore::kernels::softmax_row;

/// Top-k next-token candidates by probability, descending; ties broken by
/// ascending token id. The prefix is truncated to the most recent window
/// when it exceeds the model's max sequence length.
pub fn next_token_topk(
    state: &ModelState,
    vocab: &Vocab,
    prefix: &[u32],
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if k == 0 || k > vocab.size() {
        return Err(Error::Data(format!(
            "k = {k} out of range 1..={}",
            vocab.size()
        )));
    }
    if prefix.is_empty() {
        return Err(Error::Data("next_token_topk requires a non-empty prefix".into()));
    }
    let mut probs = next_logits(state, prefix);
    softmax_row(&mut probs);
    let mut ranked: Vec<(u32, f64)> =
        probs.into_iter().enumerate().map(|(i, p)| (i as u32, p)).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).expect("finite probabilities").then(a.0.cmp(&b.0))
    });
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|(id, p)| (vocab.token(id).to_string(), p))
        .collect())
}

/// Greedy argmax over logits with the same tie rule as `next_token_topk`.
pub fn argmax_token(logits: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy generation driven by an arbitrary next-token function. Stops when
/// the parenthesis opened by the usage's "(" is balanced by a generated
/// ")", on EOS, or after `max_new` tokens; returns only the new tokens.
pub fn generate_with<F>(mut next: F, prefix: &[u32], max_new: usize, vocab: &Vocab) -> Vec<String>
where
    F: FnMut(&[u32]) -> u32,
{
    let mut window: Vec<u32> = prefix.to_vec();
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut opened = false;
    for _ in 0..max_new {
        let id = next(&window);
        if id == EOS {
            break;
        }
        let token = vocab.token(id).to_string();
        window.push(id);
        match token.as_str() {
            "(" => {
                depth += 1;
                opened = true;
            }
            ")" => depth -= 1,
            _ => {}
        }
        out.push(token);
        if opened && depth == 0 {
            break;
        }
    }
    out
}

/// Greedy API usage generation with the real model.
pub fn generate_usage(
    state: &ModelState,
    vocab: &Vocab,
    prefix: &[u32],
    max_new: usize,
) -> Vec<String> {
    let max_len = state.config.max_seq_len;
    generate_with(
        |window| argmax_token(&next_logits(state, clip_window(window, max_len))),
        prefix,
        max_new,
        vocab,
    )
}
