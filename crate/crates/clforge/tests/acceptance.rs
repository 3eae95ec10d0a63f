//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Heavy experiments (scenario build, two pre-trainings, zero-shot, six
//! continual runs) are shared through a lazily built fixture so the suite
//! stays inside the runtime budget.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use clforge::corpus::{
    io as corpus_io, leakage_check, ApiSite, MethodSample, ScenarioData, SplitSet,
};
use clforge::error::Result;
use clforge::harness::{
    build_scenario, generate_corpus, load_corpus_config, pretrain_on_scenario, run_continual,
    run_zeroshot, FinetuneSchedule, ModelDims, PretrainConfig, RunConfig, Seeds, ZeroshotReport,
};
use clforge::metrics::{
    average_metric, bleu, codebleu_lite, em_at_k, exact_match, forgetting, ContinualReport,
    DivisorMode, EvalMatrix, EQUAL_WEIGHTS,
};
use clforge::model::vocab::Vocab;
use clforge::model::{ModelKind, ModelState};
use clforge::numcore::{
    finite_difference, max_rel_error, AttnMask, Rng, Tape, Tensor, Var,
};
use clforge::strategies::{
    ewc_consolidate, ewc_penalty, rwalk_penalty, si_penalty, Anchor, EwcState, GradOracle,
    RwalkState, SiState, StrategyConfig,
};

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn pass(criterion: &str, details: &str) {
    println!("[acceptance] {criterion}: PASS — {details}");
}

// ---------------------------------------------------------------------------
// Shared heavy fixture

struct Heavy {
    scenario: ScenarioData,
    decoder: (ModelState, Vocab),
    #[allow(dead_code)]
    encoder: (ModelState, Vocab),
    zeroshot: ZeroshotReport,
    /// Keyed by run name: naive_dec, naive_enc, replay, cumulative, si, rwalk.
    runs: BTreeMap<&'static str, ContinualReport>,
    wall: Duration,
}

static HEAVY: OnceLock<Heavy> = OnceLock::new();

fn finetune_schedule() -> FinetuneSchedule {
    FinetuneSchedule { max_epochs: 10, patience: 2, batch: 8, lr: 2e-3 }
}

/// Strategy params for the acceptance runs (defaults unless noted).
fn strategy_params(name: &str) -> serde_json::Value {
    match name {
        "si" => serde_json::json!({"c": 0.1, "xi": 0.1}),
        "rwalk" => serde_json::json!({"lambda": 1.0, "alpha": 0.9, "xi": 0.1}),
        _ => serde_json::json!({}),
    }
}

fn heavy() -> &'static Heavy {
    HEAVY.get_or_init(|| {
        let t0 = Instant::now();
        let base = manifest_dir();
        let (corpus_config, specs) =
            load_corpus_config(&base.join("configs/acceptance_corpus.json")).unwrap();
        let samples = generate_corpus(&corpus_config, &specs).unwrap();
        let scenario = build_scenario(samples, &specs, 280, 240, corpus_config.seed).unwrap();
        assert!(leakage_check(&scenario).is_empty(), "acceptance scenario leaks");

        let dec_pc: PretrainConfig = serde_json::from_str(
            &std::fs::read_to_string(base.join("configs/acceptance_decoder.json")).unwrap(),
        )
        .unwrap();
        let enc_pc: PretrainConfig = serde_json::from_str(
            &std::fs::read_to_string(base.join("configs/acceptance_encoder.json")).unwrap(),
        )
        .unwrap();
        eprintln!("[fixture] pre-training decoder...");
        let (dec_out, dec_vocab) =
            pretrain_on_scenario(ModelKind::Decoder, &dec_pc, &scenario).unwrap();
        eprintln!("[fixture] pre-training encoder...");
        let (enc_out, enc_vocab) =
            pretrain_on_scenario(ModelKind::Encoder, &enc_pc, &scenario).unwrap();

        let zeroshot = run_zeroshot(&dec_out.state, &dec_vocab, &scenario, "acceptance").unwrap();

        let mut runs = BTreeMap::new();
        let run_specs: [(&'static str, ModelKind, &str); 6] = [
            ("naive_dec", ModelKind::Decoder, "naive"),
            ("naive_enc", ModelKind::Encoder, "naive"),
            ("replay", ModelKind::Decoder, "replay"),
            ("cumulative", ModelKind::Decoder, "cumulative"),
            ("si", ModelKind::Decoder, "si"),
            ("rwalk", ModelKind::Decoder, "rwalk"),
        ];
        for (key, kind, strat) in run_specs {
            eprintln!("[fixture] continual run {key}...");
            let (state, vocab) = match kind {
                ModelKind::Decoder => (dec_out.state.clone(), &dec_vocab),
                ModelKind::Encoder => (enc_out.state.clone(), &enc_vocab),
            };
            let config = StrategyConfig::named(strat, strategy_params(strat));
            let strategy = config.build().unwrap();
            let mut rc = RunConfig::new("acceptance", "acceptance", config);
            rc.schedule = finetune_schedule();
            rc.seeds = Seeds::all(1);
            let outcome = run_continual(state, vocab, Some(strategy), &scenario, &rc).unwrap();
            runs.insert(key, outcome.report);
        }

        Heavy {
            scenario,
            decoder: (dec_out.state, dec_vocab),
            encoder: (enc_out.state, enc_vocab),
            zeroshot,
            runs,
            wall: t0.elapsed(),
        }
    })
}

fn mean_f_em1(report: &ContinualReport) -> f64 {
    let mr = report.metric("em@1").expect("em@1 report");
    mr.forgetting.values().sum::<f64>() / mr.forgetting.len() as f64
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness for every primitive and penalty

struct Prim {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    build: Box<dyn Fn(&mut Tape, &[Var]) -> Var + Sync>,
}

fn primitives() -> Vec<Prim> {
    let p = |name: &'static str,
             shapes: Vec<Vec<usize>>,
             build: Box<dyn Fn(&mut Tape, &[Var]) -> Var + Sync>| Prim { name, shapes, build };
    vec![
        p("add", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.add(v[0], v[1]))),
        p("add_row", vec![vec![3, 4], vec![4]], Box::new(|t, v| t.add_row(v[0], v[1]))),
        p("sub", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.sub(v[0], v[1]))),
        p("mul", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.mul(v[0], v[1]))),
        p("scale", vec![vec![3, 4]], Box::new(|t, v| t.scale(v[0], -1.7))),
        p("square", vec![vec![3, 4]], Box::new(|t, v| t.square(v[0]))),
        p("sum", vec![vec![3, 4]], Box::new(|t, v| t.sum(v[0]))),
        p("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|t, v| t.matmul(v[0], v[1]))),
        p("matmul_nt", vec![vec![3, 4], vec![2, 4]], Box::new(|t, v| t.matmul_nt(v[0], v[1]))),
        p(
            "batched_nt",
            vec![vec![2, 2, 3, 2], vec![2, 2, 3, 2]],
            Box::new(|t, v| t.batched_nt(v[0], v[1])),
        ),
        p(
            "batched_nn",
            vec![vec![2, 2, 3, 3], vec![2, 2, 3, 2]],
            Box::new(|t, v| t.batched_nn(v[0], v[1])),
        ),
        p("split_heads", vec![vec![6, 4]], Box::new(|t, v| t.split_heads(v[0], 2, 2))),
        p("merge_heads", vec![vec![2, 2, 3, 2]], Box::new(|t, v| t.merge_heads(v[0]))),
        p("gelu", vec![vec![3, 4]], Box::new(|t, v| t.gelu(v[0]))),
        p(
            "softmax_causal",
            vec![vec![2, 2, 3, 3]],
            Box::new(|t, v| t.softmax_masked(v[0], AttnMask::Causal)),
        ),
        p(
            "softmax_padded",
            vec![vec![2, 2, 3, 3]],
            Box::new(|t, v| t.softmax_masked(v[0], AttnMask::KeyPadding(vec![2, 3]))),
        ),
        p(
            "layer_norm",
            vec![vec![3, 4], vec![4], vec![4]],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2])),
        ),
        p("gather", vec![vec![5, 3]], Box::new(|t, v| t.gather(v[0], &[0, 4, 2, 2]))),
        p("select_rows", vec![vec![4, 3]], Box::new(|t, v| t.select_rows(v[0], &[2, 0, 3]))),
        p(
            "cross_entropy",
            vec![vec![3, 5]],
            Box::new(|t, v| t.cross_entropy(v[0], &[1, 4, 0], &[1.0, 0.5, 1.0])),
        ),
    ]
}

/// Loss = sum(square(op(inputs))); scalar ops skip the square.
fn primitive_loss(prim: &Prim, theta: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let mut vars = Vec::new();
    let mut off = 0;
    for shape in &prim.shapes {
        let n: usize = shape.iter().product();
        let tensor =
            Tensor::from_vec(shape.clone(), theta[off..off + n].to_vec()).unwrap().with_grad();
        vars.push(tape.leaf(tensor));
        off += n;
    }
    let out = (prim.build)(&mut tape, &vars);
    let loss = if tape.value(out).is_scalar() {
        out
    } else {
        let sq = tape.square(out);
        tape.sum(sq)
    };
    tape.value(loss).item()
}

fn primitive_grad(prim: &Prim, theta: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let mut vars = Vec::new();
    let mut off = 0;
    for shape in &prim.shapes {
        let n: usize = shape.iter().product();
        let tensor =
            Tensor::from_vec(shape.clone(), theta[off..off + n].to_vec()).unwrap().with_grad();
        vars.push(tape.leaf(tensor));
        off += n;
    }
    let out = (prim.build)(&mut tape, &vars);
    let loss = if tape.value(out).is_scalar() {
        out
    } else {
        let sq = tape.square(out);
        tape.sum(sq)
    };
    let mut grads = tape.backward(loss).unwrap();
    let mut flat = Vec::with_capacity(theta.len());
    for v in vars {
        flat.extend_from_slice(grads.take(v).unwrap().data());
    }
    flat
}

#[test]
fn criterion_01_gradient_correctness() {
    let t0 = Instant::now();
    let prims = primitives();
    let mut instances = 0usize;
    let mut worst = 0.0f64;
    for prim in &prims {
        let dim: usize = prim.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        for seed in 0..6u64 {
            let mut rng = Rng::new(1000 + seed * 37 + instances as u64);
            let theta: Vec<f64> = (0..dim).map(|_| rng.normal() * 0.8).collect();
            let analytic = primitive_grad(prim, &theta);
            let numeric = finite_difference(|t| primitive_loss(prim, t), &theta, 1e-5).unwrap();
            let err = max_rel_error(&analytic, &numeric);
            assert!(err < 1e-5, "{}: max rel err {err} at seed {seed}", prim.name);
            worst = worst.max(err);
            instances += 1;
        }
    }
    // Strategy penalties against the same oracle.
    for seed in 0..12u64 {
        let mut rng = Rng::new(7000 + seed);
        let dim = 6;
        let theta: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let anchor: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let importance: Vec<f64> = (0..dim).map(|_| rng.uniform() * 2.0).collect();

        let mut ewc = EwcState::new(0.5 + rng.uniform(), 4);
        ewc.anchors.push(Anchor { theta_star: anchor.clone(), fisher: importance.clone() });
        let (_, g) = ewc_penalty(&theta, &ewc);
        let numeric = finite_difference(|t| ewc_penalty(t, &ewc).0, &theta, 1e-5).unwrap();
        let err = max_rel_error(&g.unwrap(), &numeric);
        assert!(err < 1e-5, "ewc penalty err {err}");
        worst = worst.max(err);

        let mut si = SiState::new(0.3 + rng.uniform(), 0.1);
        si.ensure_initialized(&anchor);
        si.big_omega = importance.clone();
        let (_, g) = si_penalty(&theta, &si);
        let numeric = finite_difference(|t| si_penalty(t, &si).0, &theta, 1e-5).unwrap();
        let err = max_rel_error(&g.unwrap(), &numeric);
        assert!(err < 1e-5, "si penalty err {err}");
        worst = worst.max(err);

        let mut rw = RwalkState::new(0.4 + rng.uniform(), 0.9, 0.1);
        rw.ensure_initialized(dim);
        rw.anchors.push((anchor.clone(), importance.clone()));
        let (_, g) = rwalk_penalty(&theta, &rw);
        let numeric = finite_difference(|t| rwalk_penalty(t, &rw).0, &theta, 1e-5).unwrap();
        let err = max_rel_error(&g.unwrap(), &numeric);
        assert!(err < 1e-5, "rwalk penalty err {err}");
        worst = worst.max(err);

        instances += 3;
    }
    let elapsed = t0.elapsed();
    assert!(instances >= 100, "only {instances} gradient-check instances");
    assert!(elapsed < Duration::from_secs(120), "gradient checks took {elapsed:?}");
    pass(
        "criterion 1 (gradient correctness)",
        &format!("{instances} instances, max rel err {worst:.2e}, {elapsed:.1?}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: Fisher oracle on a tiny tape-built model

/// 25-parameter softmax classifier driven through the tape.
struct TinyClassifier {
    w: Tensor, // [5, 4]
    b: Tensor, // [5]
}

impl TinyClassifier {
    fn new(rng: &mut Rng) -> Self {
        TinyClassifier {
            w: Tensor::randn(vec![5, 4], 0.5, rng).with_grad(),
            b: Tensor::randn(vec![5], 0.5, rng).with_grad(),
        }
    }

    fn features(sample: &MethodSample) -> (Vec<f64>, u32) {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for byte in sample.hash.bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut x = Vec::with_capacity(4);
        for i in 0..4u64 {
            let mut z = h ^ (i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            x.push((z >> 11) as f64 / (1u64 << 53) as f64 - 0.5);
        }
        (x, (h % 5) as u32)
    }
}

impl GradOracle for TinyClassifier {
    fn param_vector(&mut self) -> Vec<f64> {
        let mut v = self.w.data().to_vec();
        v.extend_from_slice(self.b.data());
        v
    }

    fn sample_nll_grad(&mut self, sample: &MethodSample) -> Result<Vec<f64>> {
        let (x, target) = Self::features(sample);
        let mut tape = Tape::new();
        let w = tape.leaf(self.w.clone());
        let b = tape.leaf(self.b.clone());
        let xv = tape.constant(Tensor::from_vec(vec![1, 4], x).unwrap());
        let z = tape.matmul_nt(xv, w);
        let z = tape.add_row(z, b);
        let loss = tape.cross_entropy(z, &[target], &[1.0]);
        let mut grads = tape.backward(loss)?;
        let mut flat = grads.take(w).unwrap().data().to_vec();
        flat.extend_from_slice(grads.take(b).unwrap().data());
        Ok(flat)
    }
}

#[test]
fn criterion_02_fisher_oracle() {
    let mut rng = Rng::new(31);
    let mut model = TinyClassifier::new(&mut rng);
    assert!(model.param_vector().len() <= 100);
    let pool: Vec<MethodSample> = (0..8)
        .map(|i| {
            MethodSample::new(
                format!("sample {i} ;").split_whitespace().map(String::from).collect(),
                vec![],
            )
        })
        .collect();

    // Independent brute-force loop.
    let mut expected = vec![0.0; 25];
    for s in &pool {
        let g = model.sample_nll_grad(s).unwrap();
        for (e, gi) in expected.iter_mut().zip(&g) {
            *e += gi * gi;
        }
    }
    for e in expected.iter_mut() {
        *e /= pool.len() as f64;
    }

    let mut state = EwcState::new(1.0, 100);
    let mut fisher_rng = Rng::new(9);
    ewc_consolidate(&mut state, &mut model, &pool, &mut fisher_rng).unwrap();
    let mut max_diff = 0.0f64;
    for (got, exp) in state.anchors[0].fisher.iter().zip(&expected) {
        max_diff = max_diff.max((got - exp).abs());
    }
    assert!(max_diff < 1e-10, "fisher deviates by {max_diff}");
    pass(
        "criterion 2 (Fisher oracle)",
        &format!("25-param model, 8 samples, max abs diff {max_diff:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: meta-metric exactness

#[test]
fn criterion_03_meta_metric_exactness() {
    let matrix = EvalMatrix::from_rows(
        "em@1",
        5,
        vec![
            vec![57.37],
            vec![56.10, 60.93],
            vec![55.20, 57.66, 30.00],
            vec![54.00, 56.20, 29.10, 40.00],
            vec![51.73, 55.10, 28.40, 39.20, 50.00],
        ],
    )
    .unwrap();
    let f_general = forgetting(&matrix, 1, 5).unwrap();
    assert!((f_general - 5.64).abs() < 1e-12, "F General {f_general}");
    let f_one = forgetting(&matrix, 2, 3).unwrap();
    assert!((f_one - 3.27).abs() < 1e-12, "F one-step {f_one}");

    // Average unit suite in both divisor modes.
    let col3 = EvalMatrix::from_rows(
        "em",
        5,
        vec![
            vec![1.0],
            vec![1.0, 2.0],
            vec![1.0, 2.0, 60.0],
            vec![1.0, 2.0, 58.0, 3.0],
            vec![1.0, 2.0, 56.0, 3.0, 4.0],
        ],
    )
    .unwrap();
    let observed = average_metric(&col3, 3, DivisorMode::Observed).unwrap();
    assert!((observed - 58.0).abs() < 1e-12);
    let full = average_metric(&col3, 3, DivisorMode::FullT).unwrap();
    assert!((full - 34.8).abs() < 1e-12);
    let full1 = average_metric(&col3, 1, DivisorMode::FullT).unwrap();
    assert!((full1 - 1.0).abs() < 1e-12);
    assert!(average_metric(&col3, 6, DivisorMode::Observed).is_err());
    pass(
        "criterion 3 (meta-metric exactness)",
        "F(57.37, 51.73) = 5.64 and F(60.93, 57.66) = 3.27; averages agree in both modes",
    );
}

// ---------------------------------------------------------------------------
// Criteria 4-6: the heavy experiments

#[test]
fn criterion_04_zero_shot_gap() {
    let h = heavy();
    let call = &h.zeroshot.api_call;
    let id_em1 = call.iter().find(|r| r.dataset == "ID_test").unwrap().em1;
    let ood_em1 = call.iter().find(|r| r.dataset == "OOD_all").unwrap().em1;
    let usage = &h.zeroshot.api_usage;
    let id_bleu = usage.iter().find(|r| r.dataset == "ID_test").unwrap().bleu;
    let ood_bleu = usage.iter().find(|r| r.dataset == "OOD_all").unwrap().bleu;
    assert!(
        id_em1 - ood_em1 >= 10.0,
        "zero-shot EM@1 gap {:.2} < 10 (ID {id_em1:.2}, OOD {ood_em1:.2})",
        id_em1 - ood_em1
    );
    assert!(id_bleu > ood_bleu, "ID BLEU {id_bleu:.2} <= OOD BLEU {ood_bleu:.2}");
    pass(
        "criterion 4 (zero-shot gap)",
        &format!(
            "EM@1 gap {:.2}pp (ID {id_em1:.2} vs OOD {ood_em1:.2}); BLEU {id_bleu:.2} > {ood_bleu:.2}",
            id_em1 - ood_em1
        ),
    );
}

#[test]
fn criterion_05_naive_forgetting_exists() {
    let h = heavy();
    let dec = &h.runs["naive_dec"];
    let enc = &h.runs["naive_enc"];
    let dec_f = dec.metric("em@1").unwrap();
    let positive = dec_f.forgetting.values().filter(|&&f| f > 0.0).count();
    assert!(
        positive >= 3,
        "decoder naive: only {positive} of {} domains show F > 0: {:?}",
        dec_f.forgetting.len(),
        dec_f.forgetting
    );
    let dec_mean = mean_f_em1(dec);
    let enc_mean = mean_f_em1(enc);
    assert!(
        enc_mean > dec_mean,
        "encoder mean F {enc_mean:.2} not greater than decoder mean F {dec_mean:.2}"
    );
    pass(
        "criterion 5 (naive forgetting exists)",
        &format!(
            "decoder F>0 on {positive}/4 domains; encoder mean F {enc_mean:.2} > decoder {dec_mean:.2}"
        ),
    );
}

#[test]
fn criterion_06_strategies_mitigate_forgetting() {
    let h = heavy();
    let naive = mean_f_em1(&h.runs["naive_dec"]);
    let mut details = format!("naive {naive:.2}");
    for key in ["replay", "cumulative", "si", "rwalk"] {
        let mean = mean_f_em1(&h.runs[key]);
        assert!(mean < naive, "{key} mean F {mean:.2} not strictly below naive {naive:.2}");
        details.push_str(&format!(", {key} {mean:.2}"));
    }
    let cumulative = mean_f_em1(&h.runs["cumulative"]);
    assert!(cumulative <= 0.5, "cumulative mean F {cumulative:.2} above 0.5pp");
    pass("criterion 6 (strategies mitigate forgetting)", &details);
}

// ---------------------------------------------------------------------------
// Criterion 7: CLI determinism (byte-identical reports)

fn run_cli(args: &[&str], dir: &Path) -> (i32, String) {
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_clforge"))
        .args(args)
        .current_dir(dir)
        .env_remove("CLFORGE_SEED")
        .env("CLFORGE_THREADS", "2")
        .output()
        .expect("spawn clforge");
    let code = output.status.code().unwrap_or(-1);
    let text = String::from_utf8_lossy(&output.stdout).to_string()
        + &String::from_utf8_lossy(&output.stderr);
    (code, text)
}

fn tiny_cli_world(dir: &Path) {
    // Two-domain corpus config referencing the shipped manifests.
    let manifests = manifest_dir().join("data/domains");
    let config = serde_json::json!({
        "manifests": [
            manifests.join("general.json").to_string_lossy(),
            manifests.join("security.json").to_string_lossy(),
        ],
        "methods_per_domain": 60,
        "id_methods": 240,
        "length_range": [30, 56],
        "seed": 5
    });
    std::fs::write(dir.join("corpus_config.json"), config.to_string()).unwrap();
    std::fs::create_dir_all(dir.join("manifests")).unwrap();
    for name in ["general.json", "security.json"] {
        std::fs::copy(manifests.join(name), dir.join("manifests").join(name)).unwrap();
    }
    let pretrain = serde_json::json!({
        "model": {"layers": 1, "heads": 2, "embed_dim": 32, "ff_dim": 64,
                   "max_seq_len": 64, "dropout": 0.0},
        "schedule": {"max_steps": 30, "batch": 8, "eval_every": 15, "lr": 0.002},
        "vocab": {"min_freq": 2},
        "seed": 5
    });
    std::fs::write(dir.join("pretrain_config.json"), pretrain.to_string()).unwrap();
}

fn files_identical(a: &Path, b: &Path, names: &[&str]) {
    for name in names {
        let fa = std::fs::read(a.join(name)).unwrap_or_else(|_| panic!("missing {name} in A"));
        let fb = std::fs::read(b.join(name)).unwrap_or_else(|_| panic!("missing {name} in B"));
        assert_eq!(fa, fb, "file {name} differs between identical runs");
    }
}

#[test]
fn criterion_07_cli_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    tiny_cli_world(dir);

    for round in ["a", "b"] {
        let (code, log) =
            run_cli(&["gen-corpus", "--config", "corpus_config.json", "--out", &format!("gen_{round}")], dir);
        assert_eq!(code, 0, "gen-corpus failed: {log}");
        let (code, log) = run_cli(
            &[
                "split", "--corpus", &format!("gen_{round}/corpus.jsonl"), "--manifests",
                "manifests", "--id-test", "24", "--id-valid", "24", "--seed", "5", "--out",
                &format!("scenario_{round}"),
            ],
            dir,
        );
        assert_eq!(code, 0, "split failed: {log}");
        let (code, log) = run_cli(
            &["validate", "--scenario", &format!("scenario_{round}/scenario.json")],
            dir,
        );
        assert_eq!(code, 0, "validate failed: {log}");
        let (code, log) = run_cli(
            &[
                "pretrain", "--scenario", &format!("scenario_{round}/scenario.json"), "--model",
                "decoder", "--config", "pretrain_config.json", "--out",
                &format!("ckpt_{round}.clf"),
            ],
            dir,
        );
        assert_eq!(code, 0, "pretrain failed: {log}");
        let (code, log) = run_cli(
            &[
                "zeroshot", "--ckpt", &format!("ckpt_{round}.clf"), "--scenario",
                &format!("scenario_{round}/scenario.json"), "--out", &format!("zs_{round}"),
            ],
            dir,
        );
        assert_eq!(code, 0, "zeroshot failed: {log}");
        let (code, log) = run_cli(
            &[
                "finetune", "--ckpt", &format!("ckpt_{round}.clf"), "--scenario",
                &format!("scenario_{round}/scenario.json"), "--strategy", "replay",
                "--strategy-params", "{\"capacity\":20}", "--out", &format!("ft_{round}"),
                "--epochs", "2", "--batch", "8", "--seed", "3",
            ],
            dir,
        );
        assert_eq!(code, 0, "finetune failed: {log}");
    }

    // Same commands, same seeds: byte-identical artifacts (timestamps live
    // only in run_info.json which is excluded).
    files_identical(&dir.join("gen_a"), &dir.join("gen_b"), &["corpus.jsonl"]);
    files_identical(
        &dir.join("scenario_a"),
        &dir.join("scenario_b"),
        &["scenario.json", "id_train.jsonl", "ood1_train.jsonl", "ood2_test.jsonl"],
    );
    let ca = std::fs::read(dir.join("ckpt_a.clf")).unwrap();
    let cb = std::fs::read(dir.join("ckpt_b.clf")).unwrap();
    assert_eq!(ca, cb, "checkpoints differ");
    files_identical(
        &dir.join("zs_a"),
        &dir.join("zs_b"),
        &["zeroshot.json", "zeroshot_api_call.csv", "zeroshot_api_usage.csv"],
    );
    files_identical(
        &dir.join("ft_a"),
        &dir.join("ft_b"),
        &[
            "report.json",
            "summary.csv",
            "metric_api_call_em@1.json",
            "heatmap_api_call_em@1.csv",
            "heatmap_api_usage_bleu.csv",
            "final_model.clf",
        ],
    );

    // Exit codes: usage error is 1.
    let (code, _) = run_cli(&["no-such-command"], dir);
    assert_eq!(code, 1);
    // Data error is 2.
    let (code, _) = run_cli(&["validate", "--scenario", "missing.json"], dir);
    assert_eq!(code, 2);
    pass(
        "criterion 7 (CLI determinism)",
        "gen-corpus/split/pretrain/zeroshot/finetune byte-identical across reruns; exit codes 1/2 verified",
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: data validity over 20 seeds plus injected violations

#[test]
fn criterion_08_data_validity() {
    let (corpus_config, specs) =
        load_corpus_config(&manifest_dir().join("configs/acceptance_corpus.json")).unwrap();
    for seed in 0..20u64 {
        let config = clforge::harness::CorpusConfig {
            methods_per_domain: 40,
            id_methods: 160,
            seed: 7000 + seed,
            ..corpus_config.clone()
        };
        let samples = generate_corpus(&config, &specs).unwrap();
        let scenario = build_scenario(samples, &specs, 20, 20, 7000 + seed).unwrap();
        let violations = leakage_check(&scenario);
        assert!(violations.is_empty(), "seed {seed}: {violations:?}");
    }

    // Injected violations are detected with the right reason codes.
    let config = clforge::harness::CorpusConfig {
        methods_per_domain: 40,
        id_methods: 160,
        seed: 99,
        ..corpus_config
    };
    let samples = generate_corpus(&config, &specs).unwrap();
    let mut scenario = build_scenario(samples, &specs, 20, 20, 99).unwrap();

    // (a) a Security sample planted in ID train
    let planted = scenario.ood[1].1.train[0].clone();
    scenario.id_split.train.push(planted.clone());
    let violations = leakage_check(&scenario);
    assert!(
        violations.iter().any(|v| v.reason == "domain API in ID" && v.hash == planted.hash),
        "missing 'domain API in ID': {violations:?}"
    );
    scenario.id_split.train.pop();

    // (b) duplicate one hash across two domain splits
    let dup = scenario.ood[0].1.train[0].clone();
    scenario.ood[1].1.test.push(dup.clone());
    let violations = leakage_check(&scenario);
    assert!(
        violations.iter().any(|v| v.reason == "cross-split duplicate" && v.hash == dup.hash),
        "missing 'cross-split duplicate': {violations:?}"
    );
    scenario.ood[1].1.test.pop();

    // (c) a sample spanning two domains
    let mut multi = scenario.ood[0].1.train[0].clone();
    let foreign = scenario.ood[1].1.train[0]
        .sites
        .first()
        .expect("domain sample has sites")
        .clone();
    multi.sites.push(ApiSite { start: 0, call: 0, end: 1, ..foreign });
    multi.sites.sort_by_key(|s| s.call);
    let hash = multi.hash.clone();
    scenario.ood[0].1.train.push(multi);
    let violations = leakage_check(&scenario);
    assert!(
        violations.iter().any(|v| v.reason == "multi-domain sample" && v.hash == hash),
        "missing 'multi-domain sample': {violations:?}"
    );
    pass(
        "criterion 8 (data validity)",
        "20 seeds leak-free; all three injected violations detected with correct reason codes",
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: metric bounds and monotonicity (randomized)

#[test]
fn criterion_09_metric_properties() {
    let mut rng = Rng::new(4242);
    let vocab: Vec<String> = (0..12).map(|i| format!("t{i}")).collect();
    let mut cases = 0;
    for _ in 0..300 {
        let n = 1 + rng.below(6);
        let mut candidates = Vec::new();
        let mut truths = Vec::new();
        let mut preds = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..n {
            let list: Vec<String> =
                (0..10).map(|_| vocab[rng.below(vocab.len())].clone()).collect();
            candidates.push(list);
            truths.push(vocab[rng.below(vocab.len())].clone());
            let plen = 1 + rng.below(8);
            let tlen = 1 + rng.below(8);
            preds.push((0..plen).map(|_| vocab[rng.below(vocab.len())].clone()).collect());
            refs.push((0..tlen).map(|_| vocab[rng.below(vocab.len())].clone()).collect());
        }
        // em_at_k non-decreasing in k, all metrics in [0, 100].
        let mut prev = 0.0;
        for k in 1..=10 {
            let v = em_at_k(&candidates, &truths, k).unwrap();
            assert!((0.0..=100.0).contains(&v));
            assert!(v + 1e-12 >= prev, "em@k decreased: {v} < {prev}");
            prev = v;
        }
        let b = bleu(&preds, &refs).unwrap();
        assert!((0.0..=100.0).contains(&b), "bleu {b}");
        let cb = codebleu_lite(&preds, &refs, EQUAL_WEIGHTS).unwrap();
        assert!((0.0..=100.0).contains(&cb), "codebleu {cb}");
        let em = exact_match(&preds, &refs).unwrap();
        assert!((0.0..=100.0).contains(&em));

        // EM = 100 implies BLEU = CodeBLEU-lite = 100.
        let exact = exact_match(&refs, &refs).unwrap();
        assert_eq!(exact, 100.0);
        let b100 = bleu(&refs, &refs).unwrap();
        let cb100 = codebleu_lite(&refs, &refs, EQUAL_WEIGHTS).unwrap();
        assert!((b100 - 100.0).abs() < 1e-9, "bleu on identical = {b100}");
        assert!((cb100 - 100.0).abs() < 1e-9, "codebleu on identical = {cb100}");
        cases += 1;
    }
    pass(
        "criterion 9 (metric bounds and monotonicity)",
        &format!("{cases} randomized corpora checked"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: replay invariants and zero-coefficient equivalence

fn tiny_bitwise_scenario() -> ScenarioData {
    let (corpus_config, specs) =
        load_corpus_config(&manifest_dir().join("configs/acceptance_corpus.json")).unwrap();
    let config = clforge::harness::CorpusConfig {
        methods_per_domain: 40,
        id_methods: 120,
        seed: 17,
        ..corpus_config
    };
    let samples = generate_corpus(&config, &specs).unwrap();
    let full = build_scenario(samples, &specs, 15, 15, 17).unwrap();
    clforge::harness::scenario::truncate_scenario(&full, 2)
}

fn tiny_bitwise_run(scenario: &ScenarioData, strategy: Option<StrategyConfig>) -> Vec<f64> {
    let dims = ModelDims {
        layers: 1,
        heads: 2,
        embed_dim: 32,
        ff_dim: 64,
        max_seq_len: 64,
        dropout: 0.0,
    };
    let (state, vocab) =
        clforge::harness::scenario::init_model_for_scenario(ModelKind::Decoder, &dims, scenario, 23)
            .unwrap();
    let (config, built) = match strategy {
        Some(sc) => {
            let built = sc.build().unwrap();
            (sc, Some(built))
        }
        None => (StrategyConfig::naive(), None),
    };
    let mut rc = RunConfig::new("tiny", "tiny", config);
    rc.schedule = FinetuneSchedule { max_epochs: 2, patience: 2, batch: 8, lr: 1e-3 };
    rc.seeds = Seeds::all(11);
    let outcome = run_continual(state, &vocab, built, scenario, &rc).unwrap();
    outcome.state.flatten()
}

#[test]
fn criterion_10_replay_invariants() {
    let h = heavy();
    let replay = &h.runs["replay"];
    let sizes = replay.diagnostics["buffer_sizes"]
        .as_array()
        .expect("buffer sizes recorded")
        .iter()
        .map(|v| v.as_u64().expect("replay buffer size"))
        .collect::<Vec<_>>();
    assert_eq!(sizes.len(), 5);
    for &s in &sizes {
        assert!(s <= 200, "buffer exceeded capacity: {s}");
    }
    assert_eq!(sizes[0], 200, "buffer should fill to capacity after experience 1");

    // Cumulative view sizes equal the cumulative train sizes.
    let cumulative = &h.runs["cumulative"];
    let views: Vec<u64> = cumulative.diagnostics["view_sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    let trains: Vec<u64> = cumulative.diagnostics["train_sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    let mut run_sum = 0;
    for (t, (&v, &tr)) in views.iter().zip(&trains).enumerate() {
        run_sum += tr;
        assert_eq!(v, run_sum, "cumulative view size at step {}", t + 1);
    }

    // Zero-coefficient regularizers and the no-strategy loop are bitwise
    // identical to Naive.
    let scenario = tiny_bitwise_scenario();
    let naive = tiny_bitwise_run(&scenario, Some(StrategyConfig::naive()));
    let none = tiny_bitwise_run(&scenario, None);
    assert_eq!(naive, none, "naive differs from the raw loop");
    for (name, params) in [
        ("ewc", serde_json::json!({"lambda": 0.0, "n_fisher": 4})),
        ("si", serde_json::json!({"c": 0.0})),
        ("rwalk", serde_json::json!({"lambda": 0.0})),
    ] {
        let run = tiny_bitwise_run(&scenario, Some(StrategyConfig::named(name, params)));
        assert_eq!(naive, run, "{name} with zero coefficient differs from naive");
    }
    pass(
        "criterion 10 (replay invariants)",
        "buffer capped at 200 and filled; cumulative views telescope; zero-coefficient runs bitwise-identical to naive",
    );
}

// ---------------------------------------------------------------------------
// Criterion 11: end-to-end budget

#[test]
fn criterion_11_budget() {
    let h = heavy();
    let budget = Duration::from_secs(90 * 60);
    assert!(
        h.wall < budget,
        "heavy experiments took {:?}, budget {:?}",
        h.wall,
        budget
    );
    // Sanity: the suite really ran the full protocol.
    assert_eq!(h.runs.len(), 6);
    assert_eq!(h.scenario.ood.len(), 5);
    for report in h.runs.values() {
        let mr = report.metric("em@1").unwrap();
        assert_eq!(mr.matrix.len(), 5);
        assert_eq!(mr.matrix[4].len(), 5);
    }
    pass(
        "criterion 11 (end-to-end budget)",
        &format!("pre-training + zero-shot + 6 continual runs in {:?}", h.wall),
    );
}
