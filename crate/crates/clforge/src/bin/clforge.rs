//! clforge CLI: corpus construction, pre-training, zero-shot evaluation,
//! continual fine-tuning, and report merging.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clforge::corpus::{
    extract_api_usages, io as corpus_io, leakage_check, lex_java, parse_imports, split_methods,
};
use clforge::error::{Error, Result};
use clforge::harness::{
    self, emit_report, emit_run_info, load_report, run_continual, run_zeroshot, summary_csv,
    verify_report, FinetuneSchedule, RunConfig, Seeds,
};
use clforge::metrics::DivisorMode;
use clforge::model::{load_checkpoint, save_checkpoint, ModelKind};
use clforge::strategies::StrategyConfig;

#[derive(Parser)]
#[command(name = "clforge", version, about = "Continual-learning laboratory for code LMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a config file.
    GenCorpus {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract method samples from Java source files.
    Extract {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        manifests: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dedup a corpus, assign domains, and write scenario splits.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        manifests: PathBuf,
        #[arg(long = "id-test")]
        id_test: usize,
        #[arg(long = "id-valid")]
        id_valid: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train a decoder or encoder on the scenario's ID split.
    Pretrain {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-shot ID-vs-OOD evaluation of a decoder checkpoint.
    Zeroshot {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continual fine-tuning over the scenario's OOD stream.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long = "strategy-params")]
        strategy_params: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 2)]
        patience: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 3e-4)]
        lr: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "observed")]
        divisor: String,
    },
    /// Merge finished runs into comparison tables.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leakage audit of a scenario; exits nonzero on violations.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help/version requests are successful exits; anything else is
            // a usage error (exit code 1).
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::GenCorpus { config, out } => gen_corpus(&config, &out),
        Command::Extract { src, manifests, out } => extract(&src, &manifests, &out),
        Command::Split { corpus, manifests, id_test, id_valid, seed, out } => {
            split(&corpus, &manifests, id_test, id_valid, seed, &out)
        }
        Command::Pretrain { scenario, model, config, out } => {
            pretrain(&scenario, &model, &config, &out)
        }
        Command::Zeroshot { ckpt, scenario, out } => zeroshot(&ckpt, &scenario, &out),
        Command::Finetune {
            ckpt,
            scenario,
            strategy,
            strategy_params,
            out,
            epochs,
            patience,
            batch,
            lr,
            seed,
            divisor,
        } => finetune(
            &ckpt,
            &scenario,
            &strategy,
            strategy_params.as_deref(),
            &out,
            FinetuneSchedule { max_epochs: epochs, patience, batch, lr },
            seed,
            &divisor,
        ),
        Command::Report { runs, out } => merge_reports(&runs, &out),
        Command::Validate { scenario } => validate(&scenario),
    }
}

fn gen_corpus(config_path: &Path, out: &Path) -> Result<u8> {
    let (mut config, specs) = harness::load_corpus_config(config_path)?;
    if let Some(seed) = harness::env_seed() {
        config.seed = seed;
    }
    let samples = harness::generate_corpus(&config, &specs)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("corpus.jsonl");
    corpus_io::write_corpus(&path, &samples)?;
    println!("wrote {} samples to {}", samples.len(), path.display());
    Ok(0)
}

fn java_files(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            java_files(&path, found)?;
        } else if path.extension().map(|x| x == "java").unwrap_or(false) {
            found.push(path);
        }
    }
    Ok(())
}

fn extract(src: &Path, manifests: &Path, out: &Path) -> Result<u8> {
    let specs = corpus_io::read_manifest_dir(manifests)?;
    let mut files = Vec::new();
    java_files(src, &mut files)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no .java files under {}", src.display())));
    }
    let mut samples = Vec::new();
    let mut methods_seen = 0usize;
    for file in &files {
        let text = std::fs::read_to_string(file)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", file.display())))?;
        let tokens =
            lex_java(&text).map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
        let imports = parse_imports(&tokens);
        for method in split_methods(&tokens) {
            methods_seen += 1;
            samples.push(extract_api_usages(&method, &imports, &specs));
        }
    }
    std::fs::create_dir_all(out)?;
    let path = out.join("corpus.jsonl");
    corpus_io::write_corpus(&path, &samples)?;
    let with_sites = samples.iter().filter(|s| !s.sites.is_empty()).count();
    println!(
        "extracted {} methods from {} files ({} with API sites) -> {}",
        methods_seen,
        files.len(),
        with_sites,
        path.display()
    );
    Ok(0)
}

fn split(
    corpus: &Path,
    manifests: &Path,
    id_test: usize,
    id_valid: usize,
    seed: u64,
    out: &Path,
) -> Result<u8> {
    let seed = harness::env_seed().unwrap_or(seed);
    let samples = corpus_io::read_corpus(corpus)?;
    let specs = corpus_io::read_manifest_dir(manifests)?;
    let scenario = harness::build_scenario(samples, &specs, id_test, id_valid, seed)?;
    let manifest = corpus_io::write_scenario(out, &scenario)?;
    println!(
        "scenario: id train/valid/test = {}/{}/{}",
        scenario.id_split.train.len(),
        scenario.id_split.valid.len(),
        scenario.id_split.test.len()
    );
    for (spec, split) in &scenario.ood {
        println!("  {}: train {} test {}", spec.name, split.train.len(), split.test.len());
    }
    println!("wrote {}", manifest.display());
    Ok(0)
}

fn pretrain(scenario_path: &Path, model: &str, config_path: &Path, out: &Path) -> Result<u8> {
    let kind = match model {
        "decoder" => ModelKind::Decoder,
        "encoder" => ModelKind::Encoder,
        other => {
            return Err(Error::Usage(format!("--model must be decoder|encoder, got {other}")))
        }
    };
    let mut pc = harness::load_pretrain_config(config_path)?;
    if let Some(seed) = harness::env_seed() {
        pc.seed = seed;
    }
    let scenario = corpus_io::load_scenario(scenario_path)?;
    harness::scenario::require_nonempty_id(&scenario)?;
    let (outcome, vocab) = harness::pretrain_on_scenario(kind, &pc, &scenario)?;
    for (step, loss) in &outcome.log {
        println!("step {step}: valid loss {loss:.6}");
    }
    println!(
        "best checkpoint at step {} (valid loss {:.6}); vocab size {}",
        outcome.best_step,
        outcome.best_valid_loss,
        vocab.size()
    );
    save_checkpoint(out, &outcome.state, &vocab)?;
    println!("wrote {}", out.display());
    Ok(0)
}

fn zeroshot(ckpt: &Path, scenario_path: &Path, out: &Path) -> Result<u8> {
    let (state, vocab) = load_checkpoint(ckpt)?;
    let scenario = corpus_io::load_scenario(scenario_path)?;
    let hash_src = serde_json::json!({
        "ckpt": ckpt.to_string_lossy(),
        "scenario": scenario_path.to_string_lossy(),
    });
    let config_hash = {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(hash_src.to_string().as_bytes());
        hex::encode(&h.finalize()[..16])
    };
    let report = run_zeroshot(&state, &vocab, &scenario, &config_hash)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("zeroshot.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let mut call_csv = String::from("dataset,n,em1,em5,em10,drop_em1,drop_em5,drop_em10\n");
    for row in &report.api_call {
        let drops = row
            .drop_pct
            .map(|d| format!("{},{},{}", d[0], d[1], d[2]))
            .unwrap_or_else(|| ",,".into());
        call_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.dataset, row.n, row.em1, row.em5, row.em10, drops
        ));
    }
    std::fs::write(out.join("zeroshot_api_call.csv"), call_csv)?;
    let mut usage_csv =
        String::from("dataset,n,bleu,em,codebleu_lite,drop_bleu,drop_em,drop_codebleu\n");
    for row in &report.api_usage {
        let drops = row
            .drop_pct
            .map(|d| format!("{},{},{}", d[0], d[1], d[2]))
            .unwrap_or_else(|| ",,".into());
        usage_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.dataset, row.n, row.bleu, row.em, row.codebleu_lite, drops
        ));
    }
    std::fs::write(out.join("zeroshot_api_usage.csv"), usage_csv)?;
    emit_run_info(out)?;
    for row in &report.api_call {
        println!(
            "{:>12}  EM@1 {:6.2}  EM@5 {:6.2}  EM@10 {:6.2}",
            row.dataset, row.em1, row.em5, row.em10
        );
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn finetune(
    ckpt: &Path,
    scenario_path: &Path,
    strategy_name: &str,
    strategy_params: Option<&str>,
    out: &Path,
    schedule: FinetuneSchedule,
    seed: u64,
    divisor: &str,
) -> Result<u8> {
    let params: serde_json::Value = match strategy_params {
        Some(text) => serde_json::from_str(text)
            .map_err(|e| Error::Usage(format!("--strategy-params is not valid JSON: {e}")))?,
        None => serde_json::json!({}),
    };
    let strategy_config = StrategyConfig::named(strategy_name, params);
    let strategy = strategy_config.build()?; // fails before any training
    let divisor_mode = match divisor {
        "observed" => DivisorMode::Observed,
        "T" => DivisorMode::FullT,
        other => return Err(Error::Usage(format!("--divisor must be observed|T, got {other}"))),
    };

    let (state, vocab) = load_checkpoint(ckpt)?;
    let scenario = corpus_io::load_scenario(scenario_path)?;
    let mut config = RunConfig::new(
        &scenario_path.to_string_lossy(),
        &ckpt.to_string_lossy(),
        strategy_config,
    );
    config.schedule = schedule;
    config.seeds = Seeds::all(seed).apply_env();
    config.divisor_mode = divisor_mode;

    let outcome = run_continual(state, &vocab, Some(strategy), &scenario, &config)?;
    emit_report(&outcome.report, out)?;
    save_checkpoint(&out.join("final_model.clf"), &outcome.state, &vocab)?;
    emit_run_info(out)?;
    for mr in &outcome.report.reports {
        if mr.metric == "em@1" || mr.metric == "em" {
            for domain in &outcome.report.domains {
                let a = mr.average.get(domain).copied().unwrap_or(f64::NAN);
                let f = mr
                    .forgetting
                    .get(domain)
                    .map(|v| format!("{v:.2}"))
                    .unwrap_or_else(|| "--".into());
                println!("{} {:>10}  A {:6.2}  F^T {f}", mr.metric, domain, a);
            }
        }
    }
    println!("wrote {}", out.join("report.json").display());
    Ok(0)
}

fn merge_reports(runs: &[PathBuf], out: &Path) -> Result<u8> {
    let mut reports = Vec::new();
    for dir in runs {
        let report = load_report(dir)?;
        verify_report(&report)?;
        reports.push(report);
    }
    std::fs::create_dir_all(out)?;
    let refs: Vec<&clforge::metrics::ContinualReport> = reports.iter().collect();
    std::fs::write(out.join("comparison.csv"), summary_csv(&refs, true))?;
    std::fs::write(out.join("comparison.json"), serde_json::to_string_pretty(&reports)? + "\n")?;
    println!("merged {} runs into {}", reports.len(), out.display());
    Ok(0)
}

fn validate(scenario_path: &Path) -> Result<u8> {
    let scenario = corpus_io::load_scenario(scenario_path)?;
    let violations = leakage_check(&scenario);
    if violations.is_empty() {
        println!("ok: zero violations");
        Ok(0)
    } else {
        for v in &violations {
            println!("violation: {} ({})", v.reason, v.hash);
        }
        eprintln!("{} violations found", violations.len());
        Ok(2)
    }
}
