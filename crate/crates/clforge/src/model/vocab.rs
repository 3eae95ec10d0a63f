//! Token vocabulary with fixed special tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const MASK: u32 = 4;

pub const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<mask>"];

/// Token <-> id bijection; ids 0..=4 are the specials in fixed order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() {
            return Err(Error::Data("vocab missing special tokens".into()));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens[i] != *s {
                return Err(Error::Data(format!(
                    "vocab slot {i} must be {s}, found {}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocab token '{t}'")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Id for a token; unknown tokens map to UNK.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.tokens
    }
}

/// Build a vocabulary from token sequences: tokens with frequency at least
/// `min_freq`, most frequent first, ties broken lexicographically;
/// `max_size`, when given, caps the total size including specials.
pub fn build_vocab<'a, I>(corpus: I, min_freq: usize, max_size: Option<usize>) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut freq: HashMap<&str, usize> = HashMap::new();
    let mut any = false;
    for seq in corpus {
        any = true;
        for tok in seq {
            *freq.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(Error::Data("build_vocab: empty corpus".into()));
    }
    let mut entries: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !SPECIALS.contains(t))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if let Some(cap) = max_size {
        if cap < SPECIALS.len() {
            return Err(Error::Data(format!("max_size {cap} below special count")));
        }
        entries.truncate(cap - SPECIALS.len());
    }
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(entries.into_iter().map(|(t, _)| t.to_string()));
    Vocab::from_tokens(tokens)
}
