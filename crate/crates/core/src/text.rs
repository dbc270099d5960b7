//! Tokenization and vocabulary shared by retrieval, encoding and evaluation.
//!
//! Tokenization is deliberately simple: lowercase, split on anything that is
//! not alphanumeric, no stemming. Every component that compares token
//! sequences (retrieval, span labeling, BLEU) uses this one tokenizer so the
//! pieces agree with each other.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Lowercase a string and split it into alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Special tokens reserved at the bottom of every vocabulary, in this order.
pub const SPECIAL_TOKENS: [&str; 7] = [
    "[PAD]", "[UNK]", "[BOS]", "[EOS]", "[RULE]", "[CLS]", "[SEP]",
];

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const RULE: u32 = 4;
pub const CLS: u32 = 5;
pub const SEP: u32 = 6;

/// Token <-> id mapping. Ids are assigned deterministically: specials first,
/// then corpus tokens in sorted order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, u32>,
}

impl Vocab {
    /// Build a vocabulary from an iterator of raw texts.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen: BTreeMap<String, ()> = BTreeMap::new();
        for text in texts {
            for tok in tokenize(text) {
                seen.entry(tok).or_insert(());
            }
        }
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(seen.into_keys());
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or("[UNK]")
    }

    /// Tokenize `text` and map to ids, unknown tokens becoming `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Map ids back to a space-joined string, skipping special tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id < SPECIAL_TOKENS.len() as u32 {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.token(id));
        }
        out
    }
}
