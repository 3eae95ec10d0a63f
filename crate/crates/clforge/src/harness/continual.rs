//! The continual fine-tuning protocol: sequential experiences with
//! validation carving, early stopping, strategy hooks, and lower-triangular
//! evaluation.

use std::collections::BTreeMap;

use crate::corpus::{MethodSample, ScenarioData};
use crate::error::{Error, Result};
use crate::harness::runconfig::RunConfig;
use crate::harness::tasks::{
    build_task_instances, eval_api_call, eval_api_usage, eval_threads, BuiltInstances, TaskKind,
};
use crate::metrics::{ContinualReport, EvalMatrix, MetricReport};
use crate::model::forward::register_params;
use crate::model::train::{
    apply_gradients, finetune_valid_loss, grads_in_order, lm_sequence, lm_sequences,
    sample_prefix_instances, task_loss,
};
use crate::model::vocab::Vocab;
use crate::model::{ModelKind, ModelState};
use crate::numcore::{Adam, AdamConfig, Rng, Tape, Tensor};
use crate::strategies::{GradOracle, Strategy};

/// GradOracle over a frozen model: per-sample NLL gradients on the
/// canonical parameter vector.
pub struct ModelOracle<'a> {
    pub state: &'a ModelState,
    pub vocab: &'a Vocab,
}

fn flatten_grads(grads: &[Tensor]) -> Vec<f64> {
    let total: usize = grads.iter().map(Tensor::numel).sum();
    let mut flat = Vec::with_capacity(total);
    for g in grads {
        flat.extend_from_slice(g.data());
    }
    flat
}

fn hash_to_seed(hash: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in hash.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl GradOracle for ModelOracle<'_> {
    fn param_vector(&mut self) -> Vec<f64> {
        self.state.flatten()
    }

    fn sample_nll_grad(&mut self, sample: &MethodSample) -> Result<Vec<f64>> {
        let seq = lm_sequence(sample, self.vocab, self.state.config.max_seq_len);
        let mut tape = Tape::new();
        let params = register_params(&mut tape, self.state);
        let loss = match self.state.config.kind {
            ModelKind::Decoder => crate::model::train::decoder_lm_loss(
                &mut tape,
                &params,
                self.state,
                &[seq],
                None,
            ),
            ModelKind::Encoder => {
                // Deterministic cuts keyed by the sample's content hash.
                let mut cut_rng = Rng::new(hash_to_seed(&sample.hash));
                let instances = sample_prefix_instances(
                    &[seq],
                    4,
                    self.state.config.max_seq_len,
                    &mut cut_rng,
                );
                crate::model::train::encoder_prefix_loss(
                    &mut tape,
                    &params,
                    self.state,
                    &instances,
                    None,
                )
            }
        };
        tape.checked_value(loss)?;
        let grads = tape.backward(loss)?;
        let ordered = grads_in_order(self.state, &params, grads)?;
        Ok(flatten_grads(&ordered))
    }
}

fn add_flat_into(grads: &mut [Tensor], flat: &[f64]) {
    let mut off = 0;
    for g in grads.iter_mut() {
        let n = g.numel();
        for (gi, &pi) in g.data_mut().iter_mut().zip(&flat[off..off + n]) {
            *gi += pi;
        }
        off += n;
    }
}

/// Carve the seeded validation subset out of an experience's training data.
/// Depends only on (data seed, experience index), never on the strategy.
pub fn carve_validation(
    train: &[MethodSample],
    fraction: f64,
    data_seed: u64,
    experience_index: usize,
) -> Result<(Vec<MethodSample>, Vec<MethodSample>)> {
    if train.len() < 2 {
        return Err(Error::Data(format!(
            "experience {experience_index} has {} training samples; need at least 2",
            train.len()
        )));
    }
    let n_valid = ((train.len() as f64 * fraction).ceil() as usize)
        .max(1)
        .min(train.len() - 1);
    let mut rng = Rng::new(data_seed).split_str("carve").split(experience_index as u64);
    let mut picks = rng.sample_indices(train.len(), n_valid);
    picks.sort_unstable();
    let mut in_valid = vec![false; train.len()];
    for p in picks {
        in_valid[p] = true;
    }
    let mut kept = Vec::with_capacity(train.len() - n_valid);
    let mut valid = Vec::with_capacity(n_valid);
    for (i, s) in train.iter().enumerate() {
        if in_valid[i] {
            valid.push(s.clone());
        } else {
            kept.push(s.clone());
        }
    }
    Ok((kept, valid))
}

struct ExperienceStats {
    epochs_run: usize,
    best_epoch: usize,
    best_val_loss: f64,
}

/// Train one experience with early stopping; restores the best checkpoint.
fn train_experience(
    state: &mut ModelState,
    vocab: &Vocab,
    strategy: &mut Option<Strategy>,
    view: &[MethodSample],
    valid: &[MethodSample],
    config: &RunConfig,
    t: usize,
) -> Result<ExperienceStats> {
    let schedule = &config.schedule;
    let view_seqs = lm_sequences(view, vocab, state.config.max_seq_len);
    let valid_seqs = lm_sequences(valid, vocab, state.config.max_seq_len);
    let valid_cut_base = Rng::new(config.seeds.data).split(t as u64);

    let mut adam = Adam::new(AdamConfig { lr: schedule.lr, ..AdamConfig::default() });
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut bad_epochs = 0usize;
    let mut epochs_run = 0usize;
    let needs_path = matches!(strategy, Some(Strategy::Si(_)) | Some(Strategy::Rwalk(_)));

    if let Some(s) = strategy.as_mut() {
        let theta = state.flatten();
        s.before_experience(&theta, t - 1);
    }

    for epoch in 1..=schedule.max_epochs {
        epochs_run = epoch;
        let mut epoch_rng =
            Rng::new(config.seeds.train).split_str("epoch").split(t as u64).split(epoch as u64);
        let mut cut_rng = epoch_rng.split_str("cuts");
        let mut drop_rng = epoch_rng.split_str("dropout");
        let mut order: Vec<usize> = (0..view_seqs.len()).collect();
        epoch_rng.shuffle(&mut order);

        for batch_idx in order.chunks(schedule.batch.max(1)) {
            let batch: Vec<Vec<u32>> = batch_idx.iter().map(|&i| view_seqs[i].clone()).collect();
            let mut tape = Tape::new();
            let params = register_params(&mut tape, state);
            let dropout = if state.config.dropout > 0.0 { Some(&mut drop_rng) } else { None };
            let loss = task_loss(&mut tape, &params, state, &batch, &mut cut_rng, dropout);
            tape.checked_value(loss).map_err(|e| {
                Error::Train(format!("{e} (experience {t}, epoch {epoch})"))
            })?;
            let grads = tape.backward(loss)?;
            let mut total = grads_in_order(state, &params, grads)?;

            let task_flat = if needs_path { Some(flatten_grads(&total)) } else { None };
            let theta_before = if needs_path { Some(state.flatten()) } else { None };

            if let Some(s) = strategy.as_ref() {
                let theta = theta_before.clone().unwrap_or_else(|| state.flatten());
                if let (_, Some(pgrad)) = s.penalty(&theta) {
                    add_flat_into(&mut total, &pgrad);
                }
            }
            apply_gradients(state, total, &mut adam)?;
            if let (Some(s), Some(task_flat), Some(before)) =
                (strategy.as_mut(), task_flat, theta_before)
            {
                let after = state.flatten();
                s.after_step(&task_flat, &before, &after);
            }
        }

        let val = finetune_valid_loss(state, &valid_seqs, schedule.batch, &valid_cut_base)?;
        let improved = best.as_ref().map(|(_, b, _)| val < *b).unwrap_or(true);
        if improved {
            best = Some((epoch, val, state.flatten()));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= schedule.patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_loss, flat) =
        best.ok_or_else(|| Error::Train("no epoch completed".into()))?;
    state.set_flat(&flat)?;
    let restored = finetune_valid_loss(state, &valid_seqs, schedule.batch, &valid_cut_base)?;
    if restored != best_val_loss {
        return Err(Error::Train(format!(
            "restored validation loss {restored} != best observed {best_val_loss}"
        )));
    }
    Ok(ExperienceStats { epochs_run, best_epoch, best_val_loss })
}

/// Full continual run outcome.
pub struct ContinualOutcome {
    pub report: ContinualReport,
    pub state: ModelState,
}

/// Run the T-step continual fine-tuning protocol. `strategy = None` runs the
/// raw loop with no hook calls at all (Naive must match it bitwise).
pub fn run_continual(
    mut state: ModelState,
    vocab: &Vocab,
    mut strategy: Option<Strategy>,
    scenario: &ScenarioData,
    config: &RunConfig,
) -> Result<ContinualOutcome> {
    let t_max = scenario.ood.len();
    if t_max < 2 {
        return Err(Error::Data(format!("scenario has {t_max} domains; need T >= 2")));
    }
    if state.config.kind == ModelKind::Encoder && !state.lm_head_initialized {
        let mut head_rng = Rng::new(config.seeds.model).split_str("lm-head");
        state.init_lm_head(&mut head_rng)?;
    }
    let threads = eval_threads();
    let max_len = state.config.max_seq_len;
    let domains = scenario.domain_names();

    // Test instances per domain, built once.
    let call_sets: Vec<BuiltInstances> = scenario
        .ood
        .iter()
        .map(|(_, split)| build_task_instances(&split.test, TaskKind::ApiCall, vocab, max_len))
        .collect();
    let usage_sets: Vec<BuiltInstances> = scenario
        .ood
        .iter()
        .map(|(_, split)| build_task_instances(&split.test, TaskKind::ApiUsage, vocab, max_len))
        .collect();

    let metric_names = ["em@1", "em@5", "em@10", "bleu", "em", "codebleu_lite"];
    let mut matrices: Vec<EvalMatrix> =
        metric_names.iter().map(|m| EvalMatrix::new(*m, t_max)).collect();

    let mut epochs_run = Vec::new();
    let mut best_epochs = Vec::new();
    let mut best_vals = Vec::new();
    let mut view_sizes = Vec::new();
    let mut train_sizes = Vec::new();
    let mut valid_sizes = Vec::new();
    let mut buffer_sizes = Vec::new();

    for t in 1..=t_max {
        let (_, split) = &scenario.ood[t - 1];
        let (train_part, valid_part) = if split.valid.is_empty() {
            carve_validation(&split.train, config.valid_fraction, config.seeds.data, t)?
        } else {
            (split.train.clone(), split.valid.clone())
        };
        train_sizes.push(train_part.len());
        valid_sizes.push(valid_part.len());

        let view = match strategy.as_ref() {
            Some(s) => s.training_view(&train_part),
            None => train_part.clone(),
        };
        view_sizes.push(view.len());

        let stats =
            train_experience(&mut state, vocab, &mut strategy, &view, &valid_part, config, t)?;
        epochs_run.push(stats.epochs_run);
        best_epochs.push(stats.best_epoch);
        best_vals.push(stats.best_val_loss);

        if let Some(s) = strategy.as_mut() {
            let mut oracle = ModelOracle { state: &state, vocab };
            let mut fisher_rng =
                Rng::new(config.seeds.train).split_str("fisher").split(t as u64);
            s.after_experience(&mut oracle, &train_part, t - 1, &mut fisher_rng)?;
            buffer_sizes.push(s.buffer_len());
        } else {
            buffer_sizes.push(None);
        }

        // Row t: test sets 1..=t for both tasks.
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); metric_names.len()];
        for i in 0..t {
            let call = eval_api_call(&state, vocab, &call_sets[i].instances, threads)?;
            let usage = eval_api_usage(&state, vocab, &usage_sets[i].instances, threads)?;
            rows[0].push(call.em1);
            rows[1].push(call.em5);
            rows[2].push(call.em10);
            rows[3].push(usage.bleu);
            rows[4].push(usage.em);
            rows[5].push(usage.codebleu_lite);
        }
        for (matrix, row) in matrices.iter_mut().zip(rows) {
            matrix.push_row(row)?;
        }
    }

    let config_hash = config.config_hash();
    let mut reports = Vec::new();
    for matrix in &matrices {
        reports.push(MetricReport::from_matrix(
            matrix,
            &domains,
            config.divisor_mode,
            &config_hash,
        )?);
    }
    let mut seeds = BTreeMap::new();
    seeds.insert("data".to_string(), config.seeds.data);
    seeds.insert("model".to_string(), config.seeds.model);
    seeds.insert("train".to_string(), config.seeds.train);
    let diagnostics = serde_json::json!({
        "epochs_run": epochs_run,
        "best_epochs": best_epochs,
        "best_val_losses": best_vals,
        "view_sizes": view_sizes,
        "train_sizes": train_sizes,
        "valid_sizes": valid_sizes,
        "buffer_sizes": buffer_sizes,
        "skipped_samples_api_call": call_sets.iter().map(|b| b.skipped_samples).collect::<Vec<_>>(),
        "skipped_samples_api_usage": usage_sets.iter().map(|b| b.skipped_samples).collect::<Vec<_>>(),
    });
    let report = ContinualReport {
        strategy: strategy.as_ref().map(|s| s.name().to_string()).unwrap_or_else(|| "none".into()),
        model_kind: state.config.kind.to_string(),
        domains,
        seeds,
        config_hash,
        reports,
        diagnostics,
    };
    Ok(ContinualOutcome { report, state })
}
