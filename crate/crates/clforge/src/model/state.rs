//! Model configuration and parameter state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Decoder,
    Encoder,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Decoder => write!(f, "decoder"),
            ModelKind::Encoder => write!(f, "encoder"),
        }
    }
}

/// Architecture hyperparameters; parameter names and shapes are a pure
/// function of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl ModelConfig {
    pub fn check(&self) -> Result<()> {
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Data(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.layers == 0 || self.heads == 0 || self.embed_dim == 0 || self.ff_dim == 0 {
            return Err(Error::Data("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Data(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.vocab_size <= 5 {
            return Err(Error::Data("vocab_size must exceed the special count".into()));
        }
        Ok(())
    }

    /// Canonical (name, shape) manifest in name order.
    pub fn param_manifest(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let ff = self.ff_dim;
        let v = self.vocab_size;
        let mut names: Vec<(String, Vec<usize>)> = Vec::new();
        names.push(("final_ln.b".into(), vec![d]));
        names.push(("final_ln.g".into(), vec![d]));
        for i in 0..self.layers {
            let p = format!("layer{i:02}");
            names.push((format!("{p}.attn.bk"), vec![d]));
            names.push((format!("{p}.attn.bo"), vec![d]));
            names.push((format!("{p}.attn.bq"), vec![d]));
            names.push((format!("{p}.attn.bv"), vec![d]));
            names.push((format!("{p}.attn.wk"), vec![d, d]));
            names.push((format!("{p}.attn.wo"), vec![d, d]));
            names.push((format!("{p}.attn.wq"), vec![d, d]));
            names.push((format!("{p}.attn.wv"), vec![d, d]));
            names.push((format!("{p}.ff.b1"), vec![ff]));
            names.push((format!("{p}.ff.b2"), vec![d]));
            names.push((format!("{p}.ff.w1"), vec![d, ff]));
            names.push((format!("{p}.ff.w2"), vec![ff, d]));
            names.push((format!("{p}.ln1.b"), vec![d]));
            names.push((format!("{p}.ln1.g"), vec![d]));
            names.push((format!("{p}.ln2.b"), vec![d]));
            names.push((format!("{p}.ln2.g"), vec![d]));
        }
        if self.kind == ModelKind::Encoder {
            names.push(("lm_head.b".into(), vec![v]));
            names.push(("lm_head.w".into(), vec![v, d]));
        }
        names.push(("pos_emb".into(), vec![self.max_seq_len, d]));
        names.push(("tok_emb".into(), vec![v, d]));
        names.sort_by(|a, b| a.0.cmp(&b.0));
        names
    }
}

/// Named parameter tensors plus architecture config.
///
/// Flattening `params` in name order yields the canonical parameter vector
/// used by optimizer state and strategy accumulators.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
    /// Encoder generation head: false until the harness randomly
    /// (re-)initializes it at fine-tuning time.
    pub lm_head_initialized: bool,
    pub train_step: u64,
    pub init_seed: u64,
}

impl ModelState {
    /// Fresh state: normal(0, 0.02) weights, zero biases, unit LN gains.
    /// The encoder's lm_head stays zero until fine-tuning initializes it.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.check()?;
        let seed = rng.seed();
        let mut params = BTreeMap::new();
        for (name, shape) in config.param_manifest() {
            let tensor = if name.starts_with("lm_head") {
                Tensor::zeros(shape)
            } else if name.ends_with(".g") {
                Tensor::from_vec(shape.clone(), vec![1.0; shape.iter().product()]).unwrap()
            } else if name.ends_with(".b") || name.starts_with("final_ln.b") {
                Tensor::zeros(shape)
            } else {
                Tensor::randn(shape, INIT_STD, rng)
            };
            params.insert(name, tensor.with_grad());
        }
        Ok(ModelState {
            config,
            params,
            lm_head_initialized: false,
            train_step: 0,
            init_seed: seed,
        })
    }

    /// Randomly initialize the encoder's generation head (the harness calls
    /// this once at fine-tuning time).
    pub fn init_lm_head(&mut self, rng: &mut Rng) -> Result<()> {
        if self.config.kind != ModelKind::Encoder {
            return Err(Error::Train("only encoders carry an lm_head".into()));
        }
        let d = self.config.embed_dim;
        let v = self.config.vocab_size;
        self.params
            .insert("lm_head.w".into(), Tensor::randn(vec![v, d], INIT_STD, rng).with_grad());
        self.params.insert("lm_head.b".into(), Tensor::zeros(vec![v]).with_grad());
        self.lm_head_initialized = true;
        Ok(())
    }

    pub fn param(&self, name: &str) -> &Tensor {
        &self.params[name]
    }

    pub fn total_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Canonical flat parameter vector (name order).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_params());
        for t in self.params.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrite parameters from a canonical flat vector.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_params() {
            return Err(Error::Numeric(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.total_params()
            )));
        }
        let mut off = 0;
        for t in self.params.values_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            layers: 2,
            heads: 2,
            embed_dim: 8,
            ff_dim: 16,
            max_seq_len: 12,
            vocab_size: 11,
            dropout: 0.0,
        }
    }

    #[test]
    fn manifest_is_pure_function_of_config() {
        let a = config(ModelKind::Decoder).param_manifest();
        let b = config(ModelKind::Decoder).param_manifest();
        assert_eq!(a, b);
        let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn encoder_has_lm_head_decoder_does_not() {
        let dec: Vec<String> =
            config(ModelKind::Decoder).param_manifest().into_iter().map(|(n, _)| n).collect();
        let enc: Vec<String> =
            config(ModelKind::Encoder).param_manifest().into_iter().map(|(n, _)| n).collect();
        assert!(!dec.iter().any(|n| n.starts_with("lm_head")));
        assert!(enc.iter().any(|n| n == "lm_head.w"));
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = Rng::new(3);
        let mut state = ModelState::init(config(ModelKind::Decoder), &mut rng).unwrap();
        let flat = state.flatten();
        assert_eq!(flat.len(), state.total_params());
        let mut bumped = flat.clone();
        bumped[0] += 1.0;
        state.set_flat(&bumped).unwrap();
        assert_eq!(state.flatten(), bumped);
    }

    #[test]
    fn heads_must_divide_embed() {
        let mut c = config(ModelKind::Decoder);
        c.heads = 3;
        assert!(c.check().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelState::init(config(ModelKind::Encoder), &mut Rng::new(9)).unwrap();
        let b = ModelState::init(config(ModelKind::Encoder), &mut Rng::new(9)).unwrap();
        assert_eq!(a.flatten(), b.flatten());
    }
}
