//! Training objectives and the pre-training loop.

use serde::{Deserialize, Serialize};

use crate::corpus::{MethodSample, SplitSet};
use crate::error::{Error, Result};
use crate::model::forward::{
    forward_hidden, logits_lm_head, logits_tied, register_params, BatchInput, TapedParams,
};
use crate::model::state::{ModelKind, ModelState};
use crate::model::vocab::{Vocab, BOS, EOS, MASK, PAD};
use crate::numcore::{clip_global_norm, Adam, AdamConfig, AttnMask, Rng, Tape, Tensor, Var};

pub const MLM_CORRUPT_RATE: f64 = 0.15;
pub const GRAD_CLIP_NORM: f64 = 1.0;

/// Pre-training schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub max_steps: usize,
    pub batch: usize,
    pub eval_every: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

fn default_lr() -> f64 {
    AdamConfig::default().lr
}

/// BOS + tokens + EOS, truncated to the model window at batch time.
pub fn lm_sequence(sample: &MethodSample, vocab: &Vocab, max_seq_len: usize) -> Vec<u32> {
    let budget = max_seq_len.saturating_sub(2);
    let mut ids = Vec::with_capacity(sample.tokens.len().min(budget) + 2);
    ids.push(BOS);
    for tok in sample.tokens.iter().take(budget) {
        ids.push(vocab.id(tok));
    }
    ids.push(EOS);
    ids
}

pub fn lm_sequences(samples: &[MethodSample], vocab: &Vocab, max_seq_len: usize) -> Vec<Vec<u32>> {
    samples.iter().map(|s| lm_sequence(s, vocab, max_seq_len)).collect()
}

/// Next-token causal LM loss over a batch of sequences (decoder objective).
pub fn decoder_lm_loss(
    tape: &mut Tape,
    params: &TapedParams,
    state: &ModelState,
    seqs: &[Vec<u32>],
    drop_rng: Option<&mut Rng>,
) -> Var {
    let inputs: Vec<Vec<u32>> = seqs.iter().map(|s| s[..s.len() - 1].to_vec()).collect();
    let input = BatchInput::from_sequences(&inputs);
    let mut targets = vec![PAD; input.batch * input.len];
    let mut weights = vec![0.0; input.batch * input.len];
    for (b, seq) in seqs.iter().enumerate() {
        for t in 1..seq.len() {
            targets[b * input.len + t - 1] = seq[t];
            weights[b * input.len + t - 1] = 1.0;
        }
    }
    let h = forward_hidden(tape, params, state, &input, AttnMask::Causal, drop_rng);
    let logits = logits_tied(tape, params, h);
    tape.cross_entropy(logits, &targets, &weights)
}

/// Masked-LM loss (encoder pre-training objective). 15% of non-special
/// positions are selected; of those 80% become MASK, 10% a random token,
/// 10% stay unchanged.
pub fn encoder_mlm_loss(
    tape: &mut Tape,
    params: &TapedParams,
    state: &ModelState,
    seqs: &[Vec<u32>],
    mlm_rng: &mut Rng,
    drop_rng: Option<&mut Rng>,
) -> Var {
    let vocab_size = state.config.vocab_size as u32;
    let mut corrupted: Vec<Vec<u32>> = seqs.to_vec();
    let mut selected: Vec<(usize, usize, u32)> = Vec::new();
    for (b, seq) in corrupted.iter_mut().enumerate() {
        for t in 0..seq.len() {
            let id = seq[t];
            if id == BOS || id == EOS || id == PAD {
                continue;
            }
            if mlm_rng.uniform() >= MLM_CORRUPT_RATE {
                continue;
            }
            let original = id;
            let u = mlm_rng.uniform();
            if u < 0.8 {
                seq[t] = MASK;
            } else if u < 0.9 {
                seq[t] = 5 + mlm_rng.below(vocab_size as usize - 5) as u32;
            }
            selected.push((b, t, original));
        }
    }
    // A draw selecting nothing would leave the loss undefined; fall back to
    // masking the first maskable position.
    if selected.is_empty() {
        'outer: for (b, seq) in corrupted.iter_mut().enumerate() {
            for t in 0..seq.len() {
                if seq[t] != BOS && seq[t] != EOS && seq[t] != PAD {
                    let original = seq[t];
                    seq[t] = MASK;
                    selected.push((b, t, original));
                    break 'outer;
                }
            }
        }
    }
    let input = BatchInput::from_sequences(&corrupted);
    let mut targets = vec![PAD; input.batch * input.len];
    let mut weights = vec![0.0; input.batch * input.len];
    for (b, t, original) in selected {
        targets[b * input.len + t] = original;
        weights[b * input.len + t] = 1.0;
    }
    let mask = AttnMask::KeyPadding(input.lens.clone());
    let h = forward_hidden(tape, params, state, &input, mask, drop_rng);
    let logits = logits_tied(tape, params, h);
    tape.cross_entropy(logits, &targets, &weights)
}

/// One (prefix, next-token) training instance for the encoder's
/// append-and-predict generation mode.
pub type PrefixInstance = (Vec<u32>, u32);

/// Cut every sequence into sampled prefix instances, at most `cuts` each.
pub fn sample_prefix_instances(
    seqs: &[Vec<u32>],
    cuts: usize,
    max_seq_len: usize,
    rng: &mut Rng,
) -> Vec<PrefixInstance> {
    let mut out = Vec::new();
    for seq in seqs {
        let n_targets = seq.len() - 1; // predict positions 1..=len-1
        let k = cuts.min(n_targets);
        for pick in rng.sample_indices(n_targets, k) {
            let p = pick + 1;
            let start = p.saturating_sub(max_seq_len);
            out.push((seq[start..p].to_vec(), seq[p]));
        }
    }
    out
}

/// Bidirectional next-token loss from final prefix positions through the
/// generation head (encoder fine-tuning objective).
pub fn encoder_prefix_loss(
    tape: &mut Tape,
    params: &TapedParams,
    state: &ModelState,
    instances: &[PrefixInstance],
    drop_rng: Option<&mut Rng>,
) -> Var {
    let prefixes: Vec<Vec<u32>> = instances.iter().map(|(p, _)| p.clone()).collect();
    let input = BatchInput::from_sequences(&prefixes);
    let rows: Vec<usize> =
        input.lens.iter().enumerate().map(|(b, &l)| b * input.len + l - 1).collect();
    let targets: Vec<u32> = instances.iter().map(|(_, t)| *t).collect();
    let weights = vec![1.0; targets.len()];
    let mask = AttnMask::KeyPadding(input.lens.clone());
    let h = forward_hidden(tape, params, state, &input, mask, drop_rng);
    let sel = tape.select_rows(h, &rows);
    let logits = logits_lm_head(tape, params, sel);
    tape.cross_entropy(logits, &targets, &weights)
}

/// Fine-tuning loss for one batch, dispatching on model kind. Encoders use
/// the prefix objective through the generation head.
pub fn task_loss(
    tape: &mut Tape,
    params: &TapedParams,
    state: &ModelState,
    seqs: &[Vec<u32>],
    cut_rng: &mut Rng,
    drop_rng: Option<&mut Rng>,
) -> Var {
    match state.config.kind {
        ModelKind::Decoder => decoder_lm_loss(tape, params, state, seqs, drop_rng),
        ModelKind::Encoder => {
            let instances = sample_prefix_instances(seqs, 4, state.config.max_seq_len, cut_rng);
            encoder_prefix_loss(tape, params, state, &instances, drop_rng)
        }
    }
}

/// Mean validation loss for the pre-training objective of the model's kind.
pub fn pretrain_valid_loss(
    state: &ModelState,
    valid_seqs: &[Vec<u32>],
    batch: usize,
    root_rng: &Rng,
) -> Result<f64> {
    if valid_seqs.is_empty() {
        return Err(Error::Train("validation set is empty".into()));
    }
    let mut total = 0.0;
    let mut count = 0.0;
    // Fixed corruption stream: every evaluation sees identical masks.
    let mut mlm_rng = root_rng.split_str("mlm-valid");
    for chunk in valid_seqs.chunks(batch.max(1)) {
        let weight: f64 = match state.config.kind {
            ModelKind::Decoder => chunk.iter().map(|s| s.len() as f64 - 1.0).sum(),
            ModelKind::Encoder => chunk.len() as f64,
        };
        let mut tape = Tape::new();
        let params = register_params(&mut tape, state);
        let loss = match state.config.kind {
            ModelKind::Decoder => decoder_lm_loss(&mut tape, &params, state, chunk, None),
            ModelKind::Encoder => {
                encoder_mlm_loss(&mut tape, &params, state, chunk, &mut mlm_rng, None)
            }
        };
        total += tape.checked_value(loss)?.item() * weight;
        count += weight;
    }
    Ok(total / count)
}

/// Fine-tuning validation loss: the task-only objective on held-out samples,
/// with deterministic prefix cuts for the encoder.
pub fn finetune_valid_loss(
    state: &ModelState,
    valid_seqs: &[Vec<u32>],
    batch: usize,
    cut_seed: &Rng,
) -> Result<f64> {
    if valid_seqs.is_empty() {
        return Err(Error::Train("validation set is empty".into()));
    }
    match state.config.kind {
        ModelKind::Decoder => {
            let mut total = 0.0;
            let mut count = 0.0;
            for chunk in valid_seqs.chunks(batch.max(1)) {
                let weight: f64 = chunk.iter().map(|s| s.len() as f64 - 1.0).sum();
                let mut tape = Tape::new();
                let params = register_params(&mut tape, state);
                let loss = decoder_lm_loss(&mut tape, &params, state, chunk, None);
                total += tape.checked_value(loss)?.item() * weight;
                count += weight;
            }
            Ok(total / count)
        }
        ModelKind::Encoder => {
            let mut cut_rng = cut_seed.split_str("valid-cuts");
            let instances =
                sample_prefix_instances(valid_seqs, 4, state.config.max_seq_len, &mut cut_rng);
            let mut total = 0.0;
            let mut count = 0.0;
            for chunk in instances.chunks(batch.max(1)) {
                let mut tape = Tape::new();
                let params = register_params(&mut tape, state);
                let loss = encoder_prefix_loss(&mut tape, &params, state, chunk, None);
                total += tape.checked_value(loss)?.item() * chunk.len() as f64;
                count += chunk.len() as f64;
            }
            Ok(total / count)
        }
    }
}

/// Gradients for every model parameter, in canonical name order.
pub fn grads_in_order(
    state: &ModelState,
    params: &TapedParams,
    mut grads: crate::numcore::Gradients,
) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(state.params.len());
    for (name, tensor) in state.params.iter() {
        match grads.take(params.get(name)) {
            Some(g) if g.shape() == tensor.shape() => out.push(g),
            _ => {
                return Err(Error::Numeric(format!(
                    "missing or misshapen gradient for parameter '{name}'"
                )))
            }
        }
    }
    Ok(out)
}

/// Clip to the global-norm budget and apply one optimizer step.
pub fn apply_gradients(state: &mut ModelState, grads: Vec<Tensor>, adam: &mut Adam) -> Result<()> {
    let mut clipped = grads;
    clip_global_norm(&mut clipped, GRAD_CLIP_NORM);
    let mut params: Vec<&mut Tensor> = state.params.values_mut().collect();
    let grad_refs: Vec<&Tensor> = clipped.iter().collect();
    adam.step(&mut params, &grad_refs)?;
    state.train_step += 1;
    Ok(())
}

/// Result of a pre-training run.
pub struct PretrainOutcome {
    pub state: ModelState,
    pub best_step: u64,
    pub best_valid_loss: f64,
    pub log: Vec<(u64, f64)>,
}

/// Pre-train from random initialization, tracking validation loss every
/// `eval_every` steps; returns the checkpoint with minimal validation loss.
pub fn pretrain(
    config: crate::model::state::ModelConfig,
    data: &SplitSet,
    vocab: &Vocab,
    schedule: &TrainSchedule,
    rng: &Rng,
) -> Result<PretrainOutcome> {
    if data.valid.is_empty() {
        return Err(Error::Train("pretrain requires a non-empty validation split".into()));
    }
    if data.train.is_empty() {
        return Err(Error::Train("pretrain requires a non-empty training split".into()));
    }
    let mut init_rng = rng.split_str("init");
    let mut state = ModelState::init(config, &mut init_rng)?;
    let train_seqs = lm_sequences(&data.train, vocab, state.config.max_seq_len);
    let valid_seqs = lm_sequences(&data.valid, vocab, state.config.max_seq_len);

    let mut batch_rng = rng.split_str("batch");
    let mut mlm_rng = rng.split_str("mlm");
    let mut drop_rng = rng.split_str("dropout");
    let mut adam = Adam::new(AdamConfig { lr: schedule.lr, ..AdamConfig::default() });

    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    batch_rng.shuffle(&mut order);
    let mut cursor = 0usize;
    let mut best: Option<(u64, f64, Vec<f64>)> = None;
    let mut log = Vec::new();

    for step in 1..=schedule.max_steps as u64 {
        let mut batch = Vec::with_capacity(schedule.batch);
        for _ in 0..schedule.batch {
            if cursor >= order.len() {
                batch_rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(train_seqs[order[cursor]].clone());
            cursor += 1;
        }
        let mut tape = Tape::new();
        let params = register_params(&mut tape, &state);
        let dropout = if state.config.dropout > 0.0 { Some(&mut drop_rng) } else { None };
        let loss = match state.config.kind {
            ModelKind::Decoder => decoder_lm_loss(&mut tape, &params, &state, &batch, dropout),
            ModelKind::Encoder => {
                encoder_mlm_loss(&mut tape, &params, &state, &batch, &mut mlm_rng, dropout)
            }
        };
        tape.checked_value(loss)
            .map_err(|e| Error::Train(format!("{e} at step {step}")))?;
        let grads = tape.backward(loss)?;
        let ordered = grads_in_order(&state, &params, grads)?;
        apply_gradients(&mut state, ordered, &mut adam)?;

        if step % schedule.eval_every.max(1) as u64 == 0 || step == schedule.max_steps as u64 {
            let vloss = pretrain_valid_loss(&state, &valid_seqs, schedule.batch, rng)?;
            log.push((step, vloss));
            let improved = best.as_ref().map(|(_, b, _)| vloss < *b).unwrap_or(true);
            if improved {
                best = Some((step, vloss, state.flatten()));
            }
        }
    }

    let (best_step, best_valid_loss, flat) =
        best.ok_or_else(|| Error::Train("no validation evaluation ran".into()))?;
    state.set_flat(&flat)?;
    state.train_step = best_step;
    Ok(PretrainOutcome { state, best_step, best_valid_loss, log })
}
