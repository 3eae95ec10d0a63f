//! Corpus, manifest, and scenario files.
//!
//! Corpus files are JSON Lines with one MethodSample per line; domain
//! manifests are one JSON file per domain; the scenario manifest lists
//! split file paths plus the ordered domain sequence, all relative to the
//! manifest's own directory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::sample::{DomainSpec, MethodSample, ScenarioData, SplitSet};
use crate::error::{Error, Result};

pub fn write_corpus(path: &Path, samples: &[MethodSample]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    for s in samples {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<MethodSample>> {
    let f = fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open corpus {}: {e}", path.display())))?;
    let reader = BufReader::new(f);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: MethodSample = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: bad sample: {e}", path.display(), lineno + 1))
        })?;
        for site in &sample.sites {
            site.check(sample.tokens.len())?;
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_manifest(path: &Path, spec: &DomainSpec) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(spec)? + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DomainSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
    let spec: DomainSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: bad manifest: {e}", path.display())))?;
    spec.check()?;
    Ok(spec)
}

/// All manifests in a directory, ordered by (position, name).
pub fn read_manifest_dir(dir: &Path) -> Result<Vec<DomainSpec>> {
    let mut specs = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read manifest dir {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
        .collect();
    entries.sort();
    for path in entries {
        specs.push(read_manifest(&path)?);
    }
    if specs.is_empty() {
        return Err(Error::Data(format!("no domain manifests in {}", dir.display())));
    }
    specs.sort_by(|a, b| a.position.cmp(&b.position).then_with(|| a.name.cmp(&b.name)));
    Ok(specs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPaths {
    pub train: String,
    pub valid: String,
    pub test: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OodPaths {
    pub manifest: String,
    pub train: String,
    pub valid: String,
    pub test: String,
}

/// On-disk scenario description: split file paths plus domain order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub id: SplitPaths,
    pub ood: Vec<OodPaths>,
}

fn rel(base: &Path, p: &str) -> PathBuf {
    let pb = PathBuf::from(p);
    if pb.is_absolute() {
        pb
    } else {
        base.join(pb)
    }
}

/// Load a scenario manifest and every split it references.
pub fn load_scenario(manifest_path: &Path) -> Result<ScenarioData> {
    let text = fs::read_to_string(manifest_path).map_err(|e| {
        Error::Data(format!("cannot read scenario {}: {e}", manifest_path.display()))
    })?;
    let manifest: ScenarioManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: bad scenario: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let read_opt = |p: &str| -> Result<Vec<MethodSample>> {
        if p.is_empty() {
            Ok(Vec::new())
        } else {
            read_corpus(&rel(&base, p))
        }
    };
    let id_split = SplitSet {
        train: read_opt(&manifest.id.train)?,
        valid: read_opt(&manifest.id.valid)?,
        test: read_opt(&manifest.id.test)?,
    };
    let mut ood = Vec::new();
    for entry in &manifest.ood {
        let spec = read_manifest(&rel(&base, &entry.manifest))?;
        let split = SplitSet {
            train: read_opt(&entry.train)?,
            valid: read_opt(&entry.valid)?,
            test: read_opt(&entry.test)?,
        };
        ood.push((spec, split));
    }
    Ok(ScenarioData { id_split, ood })
}

/// Write a scenario (splits, manifests, scenario.json) under `out_dir`.
/// Returns the scenario manifest path.
pub fn write_scenario(out_dir: &Path, scenario: &ScenarioData) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    write_corpus(&out_dir.join("id_train.jsonl"), &scenario.id_split.train)?;
    write_corpus(&out_dir.join("id_valid.jsonl"), &scenario.id_split.valid)?;
    write_corpus(&out_dir.join("id_test.jsonl"), &scenario.id_split.test)?;
    let mut ood_entries = Vec::new();
    for (i, (spec, split)) in scenario.ood.iter().enumerate() {
        let stem = format!("ood{}", i + 1);
        let manifest_rel = format!("manifests/{stem}_{}.json", spec.name.to_lowercase());
        write_manifest(&out_dir.join(&manifest_rel), spec)?;
        write_corpus(&out_dir.join(format!("{stem}_train.jsonl")), &split.train)?;
        write_corpus(&out_dir.join(format!("{stem}_test.jsonl")), &split.test)?;
        let valid_rel = if split.valid.is_empty() {
            String::new()
        } else {
            write_corpus(&out_dir.join(format!("{stem}_valid.jsonl")), &split.valid)?;
            format!("{stem}_valid.jsonl")
        };
        ood_entries.push(OodPaths {
            manifest: manifest_rel,
            train: format!("{stem}_train.jsonl"),
            valid: valid_rel,
            test: format!("{stem}_test.jsonl"),
        });
    }
    let manifest = ScenarioManifest {
        id: SplitPaths {
            train: "id_train.jsonl".into(),
            valid: "id_valid.jsonl".into(),
            test: "id_test.jsonl".into(),
        },
        ood: ood_entries,
    };
    let path = out_dir.join("scenario.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}
