//! Downstream task instances and their evaluation.

use serde::{Deserialize, Serialize};

use crate::corpus::MethodSample;
use crate::error::Result;
use crate::metrics;
use crate::model::vocab::{Vocab, BOS};
use crate::model::{generate_usage, next_token_topk, ModelState};

pub const USAGE_MAX_NEW: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ApiCall,
    ApiUsage,
}

/// One evaluation case: the method tokens before a call site, and the truth
/// (a single method-name token, or the full usage span).
#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub prefix: Vec<u32>,
    pub truth: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BuiltInstances {
    pub instances: Vec<TaskInstance>,
    /// Samples with no API sites, skipped.
    pub skipped_samples: usize,
}

/// One instance per API site: prefix = tokens preceding the call site
/// (api_call) or the usage span (api_usage), BOS-anchored, left-truncated
/// to max_seq_len - 1 keeping the tokens nearest the site.
pub fn build_task_instances(
    split: &[MethodSample],
    kind: TaskKind,
    vocab: &Vocab,
    max_seq_len: usize,
) -> BuiltInstances {
    let mut instances = Vec::new();
    let mut skipped_samples = 0usize;
    let budget = max_seq_len - 1;
    for sample in split {
        if sample.sites.is_empty() {
            skipped_samples += 1;
            continue;
        }
        for site in &sample.sites {
            let cut = match kind {
                TaskKind::ApiCall => site.call,
                TaskKind::ApiUsage => site.start,
            };
            let mut prefix = Vec::with_capacity(cut + 1);
            prefix.push(BOS);
            for tok in &sample.tokens[..cut] {
                prefix.push(vocab.id(tok));
            }
            if prefix.len() > budget {
                prefix = prefix[prefix.len() - budget..].to_vec();
            }
            let truth = match kind {
                TaskKind::ApiCall => vec![sample.tokens[site.call].clone()],
                TaskKind::ApiUsage => sample.tokens[site.start..site.end].to_vec(),
            };
            instances.push(TaskInstance { kind, prefix, truth });
        }
    }
    BuiltInstances { instances, skipped_samples }
}

/// Deterministic fan-out: results are merged in input order regardless of
/// thread count.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        for (items_chunk, slots_chunk) in items.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            let f = &f;
            scope.spawn(move || {
                for (item, slot) in items_chunk.iter().zip(slots_chunk.iter_mut()) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    slots.into_iter().map(|r| r.expect("worker filled slot")).collect()
}

/// Evaluation parallelism: CLFORGE_THREADS caps it, default 4.
pub fn eval_threads() -> usize {
    match std::env::var("CLFORGE_THREADS") {
        Ok(v) => v.trim().parse().unwrap_or(1).max(1),
        Err(_) => 4,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ApiCallScores {
    pub n: usize,
    pub em1: f64,
    pub em5: f64,
    pub em10: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ApiUsageScores {
    pub n: usize,
    pub bleu: f64,
    pub em: f64,
    pub codebleu_lite: f64,
}

/// EM@1/5/10 over api_call instances (one ranked candidate list each).
pub fn eval_api_call(
    state: &ModelState,
    vocab: &Vocab,
    instances: &[TaskInstance],
    threads: usize,
) -> Result<ApiCallScores> {
    let k = 10.min(vocab.size());
    let ranked: Vec<Vec<String>> = parallel_map(instances, threads, |inst| {
        next_token_topk(state, vocab, &inst.prefix, k)
            .expect("topk within range")
            .into_iter()
            .map(|(t, _)| t)
            .collect()
    });
    let truths: Vec<String> = instances.iter().map(|i| i.truth[0].clone()).collect();
    Ok(ApiCallScores {
        n: instances.len(),
        em1: metrics::em_at_k(&ranked, &truths, 1)?,
        em5: metrics::em_at_k(&ranked, &truths, 5.min(k))?,
        em10: metrics::em_at_k(&ranked, &truths, k)?,
    })
}

/// BLEU / EM / CodeBLEU-lite over greedy api_usage generations.
pub fn eval_api_usage(
    state: &ModelState,
    vocab: &Vocab,
    instances: &[TaskInstance],
    threads: usize,
) -> Result<ApiUsageScores> {
    let preds: Vec<Vec<String>> = parallel_map(instances, threads, |inst| {
        generate_usage(state, vocab, &inst.prefix, USAGE_MAX_NEW)
    });
    let truths: Vec<Vec<String>> = instances.iter().map(|i| i.truth.clone()).collect();
    Ok(ApiUsageScores {
        n: instances.len(),
        bleu: metrics::bleu(&preds, &truths)?,
        em: metrics::exact_match(&preds, &truths)?,
        codebleu_lite: metrics::codebleu_lite(&preds, &truths, metrics::EQUAL_WEIGHTS)?,
    })
}
