//! Orchestration of the three experiments: pre-training, zero-shot
//! evaluation, and continual fine-tuning, plus report emission.

pub mod continual;
pub mod report;
pub mod runconfig;
pub mod scenario;
pub mod tasks;
pub mod zeroshot;

pub use continual::{carve_validation, run_continual, ContinualOutcome, ModelOracle};
pub use report::{emit_report, emit_run_info, load_report, summary_csv, verify_report};
pub use runconfig::{env_seed, FinetuneSchedule, RunConfig, Seeds};
pub use scenario::{
    build_scenario, generate_corpus, load_corpus_config, load_pretrain_config,
    pretrain_on_scenario, scenario_vocab, CorpusConfig, ModelDims, PretrainConfig, VocabConfig,
};
pub use tasks::{
    build_task_instances, eval_api_call, eval_api_usage, eval_threads, parallel_map,
    ApiCallScores, ApiUsageScores, BuiltInstances, TaskInstance, TaskKind,
};
pub use zeroshot::{run_zeroshot, ZeroshotReport};
