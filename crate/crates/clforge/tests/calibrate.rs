//! Throwaway calibration harness (removed before release).
//!
//! CAL_RUNS: comma list of model:strategy pairs, e.g.
//!   "decoder:naive,encoder:naive,decoder:replay"

use std::path::PathBuf;
use std::time::Instant;

use clforge::corpus::io as corpus_io;
use clforge::corpus::ScenarioData;
use clforge::harness::{
    build_scenario, generate_corpus, pretrain_on_scenario, run_continual, run_zeroshot,
    CorpusConfig, ModelDims, PretrainConfig, RunConfig, Seeds, VocabConfig,
};
use clforge::model::train::TrainSchedule;
use clforge::model::vocab::Vocab;
use clforge::model::{load_checkpoint, save_checkpoint, ModelKind, ModelState};
use clforge::strategies::StrategyConfig;

fn manifests_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/domains")
}

fn cal_scenario() -> ScenarioData {
    let specs = corpus_io::read_manifest_dir(&manifests_dir()).unwrap();
    let config = CorpusConfig {
        manifests: vec![],
        methods_per_domain: 700,
        id_methods: 3600,
        length_range: (30, 56),
        seed: 1,
    };
    let samples = generate_corpus(&config, &specs).unwrap();
    build_scenario(samples, &specs, 280, 240, 1).unwrap()
}

fn pretrained(kind: ModelKind, scenario: &ScenarioData) -> (ModelState, Vocab) {
    let path = PathBuf::from(format!("/tmp/cal_{kind}.clf"));
    if path.exists() {
        let (state, vocab) = load_checkpoint(&path).unwrap();
        return (state, vocab);
    }
    let pc = PretrainConfig {
        model: ModelDims {
            layers: 2,
            heads: 4,
            embed_dim: 64,
            ff_dim: 256,
            max_seq_len: 64,
            dropout: 0.0,
        },
        schedule: TrainSchedule { max_steps: 600, batch: 16, eval_every: 150, lr: 1e-3 },
        vocab: VocabConfig::default(),
        seed: 1,
    };
    let t0 = Instant::now();
    let (outcome, vocab) = pretrain_on_scenario(kind, &pc, scenario).unwrap();
    println!("pretrain {kind}: {:?}, log {:?}", t0.elapsed(), outcome.log);
    save_checkpoint(&path, &outcome.state, &vocab).unwrap();
    (outcome.state, vocab)
}

#[test]
#[ignore]
fn calibrate_runs() {
    let runs = std::env::var("CAL_RUNS").unwrap_or_else(|_| "decoder:naive".to_string());
    let scenario = cal_scenario();
    println!(
        "scenario: ood {:?}",
        scenario.ood.iter().map(|(_, s)| (s.train.len(), s.test.len())).collect::<Vec<_>>()
    );
    for spec in runs.split(',') {
        let (model, strat) = spec.trim().split_once(':').unwrap();
        let kind = if model == "decoder" { ModelKind::Decoder } else { ModelKind::Encoder };
        let (state, vocab) = pretrained(kind, &scenario);
        let params = match strat {
            s if s.starts_with("si") && s.len() > 2 => {
                serde_json::json!({"c": s[2..].parse::<f64>().unwrap()})
            }
            s if s.starts_with("rwalk") && s.len() > 5 => {
                serde_json::json!({"lambda": s[5..].parse::<f64>().unwrap()})
            }
            s if s.starts_with("ewc") && s.len() > 3 => {
                serde_json::json!({"lambda": s[3..].parse::<f64>().unwrap()})
            }
            _ => serde_json::json!({}),
        };
        let base =
            strat.trim_end_matches(|c: char| c.is_ascii_digit() || c == '.').to_string();
        let config = StrategyConfig::named(&base, params);
        let strategy = config.build().unwrap();
        let mut rc = RunConfig::new("s", "c", config);
        rc.seeds = Seeds::all(1);
        rc.schedule.batch = 8;
        rc.schedule.lr = 2e-3;
        let t0 = Instant::now();
        let out = run_continual(state, &vocab, Some(strategy), &scenario, &rc).unwrap();
        println!("== {spec} in {:?}", t0.elapsed());
        for mr in &out.report.reports {
            if mr.metric == "em@1" {
                for row in &mr.matrix {
                    println!(
                        "  {:?}",
                        row.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
                    );
                }
                let mean_f: f64 =
                    mr.forgetting.values().sum::<f64>() / mr.forgetting.len() as f64;
                println!("  F: {:?}", mr.forgetting);
                println!("  mean F^5_em@1 = {mean_f:.2}");
            }
        }
        println!("  diag: {}", out.report.diagnostics);
    }
}

#[test]
#[ignore]
fn calibrate_zeroshot() {
    let scenario = cal_scenario();
    let (state, vocab) = pretrained(ModelKind::Decoder, &scenario);
    let zs = run_zeroshot(&state, &vocab, &scenario, "cal").unwrap();
    for row in &zs.api_call {
        println!("{} n={} em1={:.2} em5={:.2}", row.dataset, row.n, row.em1, row.em5);
    }
    for row in &zs.api_usage {
        println!("{} n={} bleu={:.2} em={:.2}", row.dataset, row.n, row.bleu, row.em);
    }
}
