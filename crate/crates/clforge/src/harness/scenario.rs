//! Config file schemas and the corpus-to-scenario pipeline shared by the
//! CLI and the acceptance experiments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    assign_domains, dedup, gen_synthetic, io as corpus_io, split_id, split_ood, DomainSpec,
    MethodSample, ScenarioData, SplitSet, SynthConfig,
};
use crate::error::{Error, Result};
use crate::model::train::TrainSchedule;
use crate::model::vocab::{build_vocab, Vocab};
use crate::model::{ModelConfig, ModelKind, ModelState, PretrainOutcome};
use crate::numcore::Rng;

pub const OOD_TEST_FRACTION: f64 = 0.10;

/// gen-corpus config file: domain manifests plus generator knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Domain manifest paths, relative to this config file.
    pub manifests: Vec<String>,
    pub methods_per_domain: usize,
    pub id_methods: usize,
    pub length_range: (usize, usize),
    pub seed: u64,
}

pub fn load_corpus_config(path: &Path) -> Result<(CorpusConfig, Vec<DomainSpec>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read config {}: {e}", path.display())))?;
    let config: CorpusConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: bad corpus config: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut specs = Vec::new();
    for m in &config.manifests {
        let mp = if Path::new(m).is_absolute() { m.into() } else { base.join(m) };
        specs.push(corpus_io::read_manifest(&mp)?);
    }
    specs.sort_by(|a, b| a.position.cmp(&b.position).then_with(|| a.name.cmp(&b.name)));
    Ok((config, specs))
}

/// Generate the synthetic corpus described by a config file.
pub fn generate_corpus(config: &CorpusConfig, specs: &[DomainSpec]) -> Result<Vec<MethodSample>> {
    let synth = SynthConfig {
        domains: specs.to_vec(),
        methods_per_domain: config.methods_per_domain,
        id_methods: config.id_methods,
        length_range: config.length_range,
        seed: config.seed,
    };
    gen_synthetic(&synth)
}

/// Dedup, assign domains, and perform the ID and per-API OOD splits.
pub fn build_scenario(
    samples: Vec<MethodSample>,
    specs: &[DomainSpec],
    id_test: usize,
    id_valid: usize,
    seed: u64,
) -> Result<ScenarioData> {
    let unique = dedup(samples);
    let assignment = assign_domains(unique, specs)?;
    let root = Rng::new(seed);
    let mut id_rng = root.split_str("id");
    let id_split = split_id(assignment.id_samples, id_test, id_valid, &mut id_rng)?;
    let mut ood = Vec::new();
    for (d, (spec, pool)) in specs.iter().zip(assignment.domain_samples).enumerate() {
        let mut rng = root.split_str("ood").split(d as u64);
        let split = split_ood(pool, spec, OOD_TEST_FRACTION, &mut rng)?;
        ood.push((spec.clone(), split));
    }
    Ok(ScenarioData { id_split, ood })
}

/// Vocabulary knobs for pre-training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabConfig {
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    #[serde(default)]
    pub max_size: Option<usize>,
}

fn default_min_freq() -> usize {
    2
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig { min_freq: 2, max_size: None }
    }
}

/// Architecture knobs (vocab size is filled in from the built vocabulary).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDims {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub dropout: f64,
}

/// pretrain config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub model: ModelDims,
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub vocab: VocabConfig,
    pub seed: u64,
}

pub fn load_pretrain_config(path: &Path) -> Result<PretrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: bad pretrain config: {e}", path.display())))
}

/// Vocabulary over the scenario's training resources: the ID training and
/// validation splits plus every OOD training split. OOD tokens are thereby
/// representable (fine-tuning can learn them) while remaining unseen during
/// pre-training.
pub fn scenario_vocab(scenario: &ScenarioData, vc: &VocabConfig) -> Result<Vocab> {
    let mut seqs: Vec<&[String]> = Vec::new();
    for s in scenario.id_split.train.iter().chain(&scenario.id_split.valid) {
        seqs.push(&s.tokens);
    }
    for (_, split) in &scenario.ood {
        for s in &split.train {
            seqs.push(&s.tokens);
        }
    }
    build_vocab(seqs, vc.min_freq, vc.max_size)
}

/// Pre-train a model of the given kind on the scenario's ID split.
pub fn pretrain_on_scenario(
    kind: ModelKind,
    pc: &PretrainConfig,
    scenario: &ScenarioData,
) -> Result<(PretrainOutcome, Vocab)> {
    let vocab = scenario_vocab(scenario, &pc.vocab)?;
    let config = ModelConfig {
        kind,
        layers: pc.model.layers,
        heads: pc.model.heads,
        embed_dim: pc.model.embed_dim,
        ff_dim: pc.model.ff_dim,
        max_seq_len: pc.model.max_seq_len,
        vocab_size: vocab.size(),
        dropout: pc.model.dropout,
    };
    let rng = Rng::new(pc.seed);
    let outcome = crate::model::pretrain(config, &scenario.id_split, &vocab, &pc.schedule, &rng)?;
    Ok((outcome, vocab))
}

/// Convenience for tests: a freshly initialized (untrained) model whose
/// vocabulary covers the scenario.
pub fn init_model_for_scenario(
    kind: ModelKind,
    dims: &ModelDims,
    scenario: &ScenarioData,
    seed: u64,
) -> Result<(ModelState, Vocab)> {
    let vocab = scenario_vocab(scenario, &VocabConfig::default())?;
    let config = ModelConfig {
        kind,
        layers: dims.layers,
        heads: dims.heads,
        embed_dim: dims.embed_dim,
        ff_dim: dims.ff_dim,
        max_seq_len: dims.max_seq_len,
        vocab_size: vocab.size(),
        dropout: dims.dropout,
    };
    let mut rng = Rng::new(seed).split_str("init");
    let state = ModelState::init(config, &mut rng)?;
    Ok((state, vocab))
}

/// Scenario splits as loaded plus any empty-split checks used by commands.
pub fn require_nonempty_id(scenario: &ScenarioData) -> Result<()> {
    let s = &scenario.id_split;
    if s.train.is_empty() || s.valid.is_empty() {
        return Err(Error::Data(
            "scenario ID split needs non-empty train and valid for pre-training".into(),
        ));
    }
    Ok(())
}

/// Make a reduced scenario containing only the first `t` domains.
pub fn truncate_scenario(scenario: &ScenarioData, t: usize) -> ScenarioData {
    ScenarioData {
        id_split: SplitSet {
            train: scenario.id_split.train.clone(),
            valid: scenario.id_split.valid.clone(),
            test: scenario.id_split.test.clone(),
        },
        ood: scenario.ood.iter().take(t).cloned().collect(),
    }
}
