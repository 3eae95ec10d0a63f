//! Transformer forward passes: a taped version for training and a plain
//! kernel version for inference. Both run the same kernels in the same
//! index order, so they agree bitwise on identical weights.

use std::collections::BTreeMap;

use crate::model::state::{ModelKind, ModelState};
use crate::model::vocab::PAD;
use crate::numcore::kernels::{self, softmax_row};
use crate::numcore::{AttnMask, Rng, Tape, Tensor, Var};

/// A padded batch of token-id sequences.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub ids: Vec<u32>,
    pub batch: usize,
    pub len: usize,
    /// True sequence lengths, used for padding masks.
    pub lens: Vec<usize>,
}

impl BatchInput {
    pub fn from_sequences(seqs: &[Vec<u32>]) -> Self {
        let batch = seqs.len();
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = vec![PAD; batch * len];
        let mut lens = Vec::with_capacity(batch);
        for (b, seq) in seqs.iter().enumerate() {
            ids[b * len..b * len + seq.len()].copy_from_slice(seq);
            lens.push(seq.len());
        }
        BatchInput { ids, batch, len, lens }
    }
}

/// Parameter leaves registered on a tape for one forward/backward pass.
pub struct TapedParams {
    pub vars: BTreeMap<String, Var>,
}

pub fn register_params(tape: &mut Tape, state: &ModelState) -> TapedParams {
    let mut vars = BTreeMap::new();
    for (name, tensor) in &state.params {
        vars.insert(name.clone(), tape.leaf(tensor.clone()));
    }
    TapedParams { vars }
}

impl TapedParams {
    pub fn get(&self, name: &str) -> Var {
        self.vars[name]
    }
}

fn positions(batch: usize, len: usize) -> Vec<u32> {
    let mut pos = Vec::with_capacity(batch * len);
    for _ in 0..batch {
        for p in 0..len {
            pos.push(p as u32);
        }
    }
    pos
}

fn dropout(tape: &mut Tape, x: Var, p: f64, rng: Option<&mut Rng>) -> Var {
    let Some(rng) = rng else { return x };
    if p == 0.0 {
        return x;
    }
    let shape = tape.value(x).shape().to_vec();
    let numel: usize = shape.iter().product();
    let scale = 1.0 / (1.0 - p);
    let data: Vec<f64> =
        (0..numel).map(|_| if rng.uniform() < p { 0.0 } else { scale }).collect();
    let mask = tape.constant(Tensor::from_vec(shape, data).unwrap());
    tape.mul(x, mask)
}

/// Transformer trunk on the tape: returns hidden states [batch*len, d]
/// after the final layer norm.
pub fn forward_hidden(
    tape: &mut Tape,
    params: &TapedParams,
    state: &ModelState,
    input: &BatchInput,
    mask: AttnMask,
    mut drop_rng: Option<&mut Rng>,
) -> Var {
    let cfg = &state.config;
    let d = cfg.embed_dim;
    let heads = cfg.heads;
    let scale = 1.0 / ((d / heads) as f64).sqrt();
    debug_assert!(input.len <= cfg.max_seq_len, "sequence exceeds max_seq_len");

    let tok = tape.gather(params.get("tok_emb"), &input.ids);
    let pos_ids = positions(input.batch, input.len);
    let pos = tape.gather(params.get("pos_emb"), &pos_ids);
    let mut h = tape.add(tok, pos);
    h = dropout(tape, h, cfg.dropout, drop_rng.as_deref_mut());

    for i in 0..cfg.layers {
        let p = format!("layer{i:02}");
        let ln1 = tape.layer_norm(h, params.get(&format!("{p}.ln1.g")), params.get(&format!("{p}.ln1.b")));
        let q = tape.matmul(ln1, params.get(&format!("{p}.attn.wq")));
        let q = tape.add_row(q, params.get(&format!("{p}.attn.bq")));
        let k = tape.matmul(ln1, params.get(&format!("{p}.attn.wk")));
        let k = tape.add_row(k, params.get(&format!("{p}.attn.bk")));
        let v = tape.matmul(ln1, params.get(&format!("{p}.attn.wv")));
        let v = tape.add_row(v, params.get(&format!("{p}.attn.bv")));
        let qh = tape.split_heads(q, input.batch, heads);
        let kh = tape.split_heads(k, input.batch, heads);
        let vh = tape.split_heads(v, input.batch, heads);
        let scores = tape.batched_nt(qh, kh);
        let scores = tape.scale(scores, scale);
        let probs = tape.softmax_masked(scores, mask.clone());
        let ctx = tape.batched_nn(probs, vh);
        let merged = tape.merge_heads(ctx);
        let proj = tape.matmul(merged, params.get(&format!("{p}.attn.wo")));
        let proj = tape.add_row(proj, params.get(&format!("{p}.attn.bo")));
        let proj = dropout(tape, proj, cfg.dropout, drop_rng.as_deref_mut());
        h = tape.add(h, proj);

        let ln2 = tape.layer_norm(h, params.get(&format!("{p}.ln2.g")), params.get(&format!("{p}.ln2.b")));
        let f1 = tape.matmul(ln2, params.get(&format!("{p}.ff.w1")));
        let f1 = tape.add_row(f1, params.get(&format!("{p}.ff.b1")));
        let act = tape.gelu(f1);
        let f2 = tape.matmul(act, params.get(&format!("{p}.ff.w2")));
        let f2 = tape.add_row(f2, params.get(&format!("{p}.ff.b2")));
        let f2 = dropout(tape, f2, cfg.dropout, drop_rng.as_deref_mut());
        h = tape.add(h, f2);
    }
    tape.layer_norm(h, params.get("final_ln.g"), params.get("final_ln.b"))
}

/// Vocabulary logits through the tied embedding: h [n, d] -> [n, V].
pub fn logits_tied(tape: &mut Tape, params: &TapedParams, h: Var) -> Var {
    tape.matmul_nt(h, params.get("tok_emb"))
}

/// Vocabulary logits through the encoder's generation head.
pub fn logits_lm_head(tape: &mut Tape, params: &TapedParams, h: Var) -> Var {
    let z = tape.matmul_nt(h, params.get("lm_head.w"));
    tape.add_row(z, params.get("lm_head.b"))
}

// ---------------------------------------------------------------------------
// Inference path (no tape)

fn ln_row(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) {
    kernels::layer_norm_rows(x, gain, bias, out, x.len() / gain.len(), gain.len());
}

/// Full forward over one sequence without recording; returns hidden rows
/// [len, d] after the final layer norm. `causal` selects the decoder mask.
pub fn infer_hidden(state: &ModelState, ids: &[u32], causal: bool) -> Vec<f64> {
    let cfg = &state.config;
    let d = cfg.embed_dim;
    let l = ids.len();
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let tok = state.param("tok_emb").data();
    let pos = state.param("pos_emb").data();
    let mut h = vec![0.0; l * d];
    for (t, &id) in ids.iter().enumerate() {
        let id = id as usize;
        for j in 0..d {
            h[t * d + j] = tok[id * d + j] + pos[t * d + j];
        }
    }

    let mut ln = vec![0.0; l * d];
    for i in 0..cfg.layers {
        let p = format!("layer{i:02}");
        ln_row(
            &h,
            state.param(&format!("{p}.ln1.g")).data(),
            state.param(&format!("{p}.ln1.b")).data(),
            &mut ln,
        );
        let proj = |w: &str, b: &str| -> Vec<f64> {
            let mut out = vec![0.0; l * d];
            kernels::matmul_nn_acc(&ln, state.param(w).data(), &mut out, l, d, d);
            let bias = state.param(b).data();
            for t in 0..l {
                for j in 0..d {
                    out[t * d + j] += bias[j];
                }
            }
            out
        };
        let q = proj(&format!("{p}.attn.wq"), &format!("{p}.attn.bq"));
        let k = proj(&format!("{p}.attn.wk"), &format!("{p}.attn.bk"));
        let v = proj(&format!("{p}.attn.wv"), &format!("{p}.attn.bv"));

        let mut merged = vec![0.0; l * d];
        let mut row = vec![0.0; l];
        for head in 0..heads {
            let off = head * dh;
            for t in 0..l {
                let limit = if causal { t + 1 } else { l };
                for (t2, slot) in row.iter_mut().enumerate().take(limit) {
                    let mut acc = 0.0;
                    for j in 0..dh {
                        acc += q[t * d + off + j] * k[t2 * d + off + j];
                    }
                    *slot = acc * scale;
                }
                softmax_row(&mut row[..limit]);
                let out = &mut merged[t * d + off..t * d + off + dh];
                for (t2, &prob) in row[..limit].iter().enumerate() {
                    for j in 0..dh {
                        out[j] += prob * v[t2 * d + off + j];
                    }
                }
            }
        }
        let wo = state.param(&format!("{p}.attn.wo")).data();
        let bo = state.param(&format!("{p}.attn.bo")).data();
        let mut attn = vec![0.0; l * d];
        kernels::matmul_nn_acc(&merged, wo, &mut attn, l, d, d);
        for t in 0..l {
            for j in 0..d {
                h[t * d + j] += attn[t * d + j] + bo[j];
            }
        }

        ln_row(
            &h,
            state.param(&format!("{p}.ln2.g")).data(),
            state.param(&format!("{p}.ln2.b")).data(),
            &mut ln,
        );
        let ff = cfg.ff_dim;
        let mut f1 = vec![0.0; l * ff];
        kernels::matmul_nn_acc(&ln, state.param(&format!("{p}.ff.w1")).data(), &mut f1, l, d, ff);
        let b1 = state.param(&format!("{p}.ff.b1")).data();
        for t in 0..l {
            for j in 0..ff {
                f1[t * ff + j] = kernels::gelu(f1[t * ff + j] + b1[j]);
            }
        }
        let mut f2 = vec![0.0; l * d];
        kernels::matmul_nn_acc(&f1, state.param(&format!("{p}.ff.w2")).data(), &mut f2, l, ff, d);
        let b2 = state.param(&format!("{p}.ff.b2")).data();
        for t in 0..l {
            for j in 0..d {
                h[t * d + j] += f2[t * d + j] + b2[j];
            }
        }
    }
    let mut out = vec![0.0; l * d];
    ln_row(&h, state.param("final_ln.g").data(), state.param("final_ln.b").data(), &mut out);
    out
}

/// Next-token logits at the final position of a prefix.
///
/// Decoders read through the tied embedding; encoders read bidirectionally
/// through the generation head.
pub fn next_logits(state: &ModelState, prefix: &[u32]) -> Vec<f64> {
    let cfg = &state.config;
    let window = clip_window(prefix, cfg.max_seq_len);
    let causal = cfg.kind == ModelKind::Decoder;
    let hidden = infer_hidden(state, window, causal);
    let d = cfg.embed_dim;
    let last = &hidden[(window.len() - 1) * d..window.len() * d];
    let v = cfg.vocab_size;
    let mut logits = vec![0.0; v];
    match cfg.kind {
        ModelKind::Decoder => {
            kernels::matmul_nt_acc(last, state.param("tok_emb").data(), &mut logits, 1, d, v);
        }
        ModelKind::Encoder => {
            kernels::matmul_nt_acc(last, state.param("lm_head.w").data(), &mut logits, 1, d, v);
            let bias = state.param("lm_head.b").data();
            for (z, b) in logits.iter_mut().zip(bias) {
                *z += b;
            }
        }
    }
    logits
}

/// Keep the most recent `max_len` tokens.
pub fn clip_window(prefix: &[u32], max_len: usize) -> &[u32] {
    if prefix.len() > max_len {
        &prefix[prefix.len() - max_len..]
    } else {
        prefix
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::state::{ModelConfig, ModelKind};
    use crate::model::vocab::BOS;

    fn tiny_state(kind: ModelKind) -> ModelState {
        let config = ModelConfig {
            kind,
            layers: 2,
            heads: 2,
            embed_dim: 8,
            ff_dim: 16,
            max_seq_len: 10,
            vocab_size: 12,
            dropout: 0.0,
        };
        let mut state = ModelState::init(config, &mut Rng::new(11)).unwrap();
        if kind == ModelKind::Encoder {
            state.init_lm_head(&mut Rng::new(12)).unwrap();
        }
        state
    }

    #[test]
    fn taped_and_inference_forward_agree_bitwise() {
        let state = tiny_state(ModelKind::Decoder);
        let ids = vec![BOS, 5, 6, 7, 8];
        let mut tape = Tape::new();
        let params = register_params(&mut tape, &state);
        let input = BatchInput::from_sequences(&[ids.clone()]);
        let h = forward_hidden(&mut tape, &params, &state, &input, AttnMask::Causal, None);
        let logits = logits_tied(&mut tape, &params, h);
        let taped = tape.value(logits).data().to_vec();

        let inferred = next_logits(&state, &ids);
        let d = ids.len();
        let last_row = &taped[(d - 1) * 12..d * 12];
        assert_eq!(last_row, inferred.as_slice());
    }

    #[test]
    fn encoder_paths_agree_bitwise() {
        let state = tiny_state(ModelKind::Encoder);
        let ids = vec![BOS, 5, 6, 9];
        let mut tape = Tape::new();
        let params = register_params(&mut tape, &state);
        let input = BatchInput::from_sequences(&[ids.clone()]);
        let mask = AttnMask::KeyPadding(input.lens.clone());
        let h = forward_hidden(&mut tape, &params, &state, &input, mask, None);
        let sel = tape.select_rows(h, &[ids.len() - 1]);
        let logits = logits_lm_head(&mut tape, &params, sel);
        let taped = tape.value(logits).data().to_vec();
        assert_eq!(taped, next_logits(&state, &ids));
    }

    #[test]
    fn causal_masking_blocks_future_tokens() {
        // Perturbing a later token never changes an earlier distribution.
        let state = tiny_state(ModelKind::Decoder);
        let base = vec![BOS, 5, 6, 7, 8];
        let mut changed = base.clone();
        changed[4] = 9;
        let d = state.config.embed_dim;
        let h_base = infer_hidden(&state, &base, true);
        let h_changed = infer_hidden(&state, &changed, true);
        for t in 0..4 {
            assert_eq!(h_base[t * d..(t + 1) * d], h_changed[t * d..(t + 1) * d]);
        }
        assert_ne!(h_base[4 * d..5 * d], h_changed[4 * d..5 * d]);
    }

    #[test]
    fn encoder_sees_future_tokens() {
        let state = tiny_state(ModelKind::Encoder);
        let base = vec![BOS, 5, 6, 7, 8];
        let mut changed = base.clone();
        changed[4] = 9;
        let d = state.config.embed_dim;
        let h_base = infer_hidden(&state, &base, false);
        let h_changed = infer_hidden(&state, &changed, false);
        assert_ne!(h_base[0..d], h_changed[0..d]);
    }

    #[test]
    fn attention_mask_patterns_are_exact() {
        let causal = AttnMask::Causal;
        let padded = AttnMask::KeyPadding(vec![3]);
        for q in 0..4 {
            for k in 0..4 {
                assert_eq!(causal.allows(0, q, k), k <= q);
                assert_eq!(padded.allows(0, q, k), k < 3);
            }
        }
        let both = AttnMask::CausalKeyPadding(vec![3]);
        assert!(both.allows(0, 2, 1));
        assert!(!both.allows(0, 1, 2));
        assert!(!both.allows(0, 3, 3));
    }

    #[test]
    fn window_clipping_keeps_most_recent() {
        let ids: Vec<u32> = (0..20).collect();
        let w = clip_window(&ids, 10);
        assert_eq!(w, (10..20).collect::<Vec<u32>>().as_slice());
    }
}
