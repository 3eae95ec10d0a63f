//! Core dataset types: API sites, method samples, domain specs, splits.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One resolved API call site inside a method token stream.
///
/// `usage_span` is the half-open token range covering
/// "Interface . method ( args )" including syntactical tokens;
/// `call_index` points at the method-name token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSite {
    pub start: usize,
    pub call: usize,
    pub end: usize,
    pub package: String,
    pub interface: String,
    pub method: String,
}

impl ApiSite {
    pub fn check(&self, token_count: usize) -> Result<()> {
        if !(self.start <= self.call && self.call < self.end && self.end <= token_count) {
            return Err(Error::Data(format!(
                "invalid api site span [{}, {}) call {} over {} tokens",
                self.start, self.call, self.end, token_count
            )));
        }
        Ok(())
    }
}

/// One tokenized method plus its annotated API sites; the atomic dataset unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSample {
    pub tokens: Vec<String>,
    pub sites: Vec<ApiSite>,
    pub hash: String,
    pub domain: Option<String>,
}

impl MethodSample {
    /// Build a sample, computing the content hash from the token sequence.
    pub fn new(tokens: Vec<String>, sites: Vec<ApiSite>) -> Self {
        let hash = content_hash(&tokens);
        MethodSample { tokens, sites, hash, domain: None }
    }
}

/// 256-bit content hash of the normalized token sequence.
///
/// Normalization is the lexed token stream itself (comments and whitespace
/// are already gone); tokens are joined with a single 0x1f separator so that
/// token boundaries cannot collide.
pub fn content_hash(tokens: &[String]) -> String {
    let mut hasher = Sha256::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1fu8]);
        }
        hasher.update(t.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// One entry of a domain manifest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainEntry {
    pub package: String,
    pub interface: String,
}

/// A named OOD domain: the (package, interface) pairs that define it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub entries: Vec<DomainEntry>,
    /// Position in the fine-tuning stream (1-based); ties broken by name.
    #[serde(default)]
    pub position: usize,
    /// Free-form annotations carried from the source table.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl DomainSpec {
    pub fn contains(&self, package: &str, interface: &str) -> bool {
        self.entries
            .iter()
            .any(|e| e.package == package && e.interface == interface)
    }

    /// Interface names must be unique within the spec.
    pub fn check(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.interface) {
                return Err(Error::Data(format!(
                    "domain '{}' lists interface '{}' twice",
                    self.name, e.interface
                )));
            }
        }
        Ok(())
    }
}

/// Specs must be pairwise disjoint on (package, interface).
pub fn check_specs_disjoint(specs: &[DomainSpec]) -> Result<()> {
    let mut seen: std::collections::HashMap<(String, String), &str> =
        std::collections::HashMap::new();
    for spec in specs {
        spec.check()?;
        for e in &spec.entries {
            let key = (e.package.clone(), e.interface.clone());
            if let Some(other) = seen.insert(key, &spec.name) {
                return Err(Error::Data(format!(
                    "domains '{}' and '{}' overlap on {}.{}",
                    other, spec.name, e.package, e.interface
                )));
            }
        }
    }
    Ok(())
}

/// Train/valid/test partition of method samples, disjoint by content hash.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<MethodSample>,
    pub valid: Vec<MethodSample>,
    pub test: Vec<MethodSample>,
}

impl SplitSet {
    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The full experimental scenario: ID splits plus the ordered OOD stream.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub id_split: SplitSet,
    pub ood: Vec<(DomainSpec, SplitSet)>,
}

impl ScenarioData {
    pub fn domain_names(&self) -> Vec<String> {
        self.ood.iter().map(|(spec, _)| spec.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn hash_depends_on_tokens_only() {
        let a = MethodSample::new(toks("int x = NUM ;"), vec![]);
        let b = MethodSample::new(toks("int x = NUM ;"), vec![]);
        let c = MethodSample::new(toks("int y = NUM ;"), vec![]);
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
    }

    #[test]
    fn separator_prevents_boundary_collisions() {
        let a = content_hash(&toks("ab c"));
        let b = content_hash(&toks("a bc"));
        assert_ne!(a, b);
    }

    #[test]
    fn overlapping_specs_rejected() {
        let mk = |name: &str| DomainSpec {
            name: name.into(),
            entries: vec![DomainEntry { package: "p".into(), interface: "I".into() }],
            position: 0,
            notes: vec![],
        };
        assert!(check_specs_disjoint(&[mk("a"), mk("b")]).is_err());
    }
}
