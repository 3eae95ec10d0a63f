//! Task metrics (EM@k, EM, BLEU, CodeBLEU-lite) and continual meta-metrics
//! (Average, Forgetting) over evaluation matrices.

mod bleu;
mod codebleu;
mod continual;
mod task;

pub use bleu::{bleu, bleu_weighted};
pub use codebleu::{codebleu_lite, EQUAL_WEIGHTS};
pub use continual::{
    average_metric, forgetting, ContinualReport, DivisorMode, EvalMatrix, MetricReport,
};
pub use task::{em_at_k, exact_match};
