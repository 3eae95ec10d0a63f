//! Checkpoint file format.
//!
//! Layout: magic "CLF1", a 4-byte little-endian length, UTF-8 JSON metadata
//! (config, parameter manifest with names/shapes/offsets, rng seed, training
//! step, vocab), then concatenated raw little-endian f64 buffers in manifest
//! order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::state::{ModelConfig, ModelState};
use crate::model::vocab::Vocab;
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"CLF1";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    config: ModelConfig,
    manifest: Vec<ManifestEntry>,
    seed: u64,
    step: u64,
    vocab: Vocab,
    lm_head_initialized: bool,
}

pub fn save_checkpoint(path: &Path, state: &ModelState, vocab: &Vocab) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut manifest = Vec::new();
    let mut offset = 0usize;
    for (name, tensor) in &state.params {
        manifest.push(ManifestEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        offset += tensor.numel();
    }
    let meta = Metadata {
        config: state.config.clone(),
        manifest,
        seed: state.init_seed,
        step: state.train_step,
        vocab: vocab.clone(),
        lm_head_initialized: state.lm_head_initialized,
    };
    let meta_bytes = serde_json::to_vec(&meta)?;
    let mut f = fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
    f.write_all(&meta_bytes)?;
    let mut buf = Vec::with_capacity(state.total_params() * 8);
    for tensor in state.params.values() {
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelState, Vocab)> {
    let mut f = fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)
        .map_err(|_| Error::Data(format!("{}: truncated checkpoint", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Data(format!("{}: not a CLF1 checkpoint", path.display())));
    }
    let mut len_bytes = [0u8; 4];
    f.read_exact(&mut len_bytes)?;
    let meta_len = u32::from_le_bytes(len_bytes) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    f.read_exact(&mut meta_bytes)?;
    let meta: Metadata = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Data(format!("{}: bad metadata: {e}", path.display())))?;
    meta.config.check()?;

    let total: usize = meta.manifest.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    if raw.len() != total * 8 {
        return Err(Error::Data(format!(
            "{}: expected {} parameter bytes, found {}",
            path.display(),
            total * 8,
            raw.len()
        )));
    }
    let expected = meta.config.param_manifest();
    if expected.len() != meta.manifest.len() {
        return Err(Error::Data(format!("{}: manifest size mismatch", path.display())));
    }
    let mut params = BTreeMap::new();
    for (entry, (name, shape)) in meta.manifest.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Data(format!(
                "{}: manifest entry '{}' does not match config",
                path.display(),
                entry.name
            )));
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let at = (entry.offset + i) * 8;
            data.push(f64::from_le_bytes(raw[at..at + 8].try_into().unwrap()));
        }
        params.insert(name.clone(), Tensor::from_vec(shape.clone(), data)?.with_grad());
    }
    let state = ModelState {
        config: meta.config,
        params,
        lm_head_initialized: meta.lm_head_initialized,
        train_step: meta.step,
        init_seed: meta.seed,
    };
    Ok((state, meta.vocab))
}
