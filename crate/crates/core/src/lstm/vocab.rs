use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;

const RESERVED: [&str; 3] = ["<bos>", "<eos>", "<unk>"];

/// Word ↔ index bijection. Indices 0, 1 and 2 are BOS, EOS and UNK; the
/// remaining words follow in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        Self::from_words(words)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    /// Every word seen at least `min_freq` times gets an index.
    pub fn build<'a, I>(sentences: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for w in s {
                *counts.entry(w.as_str()).or_default() += 1;
            }
        }
        let words = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(
                counts
                    .into_iter()
                    .filter(|(w, c)| *c >= min_freq.max(1) && !RESERVED.contains(w))
                    .map(|(w, _)| w.to_string()),
            )
            .collect();
        Self::from_words(words).expect("reserved tokens are placed once")
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < RESERVED.len() || words[..3] != RESERVED.map(String::from) {
            return Err(Error::InvalidInput(
                "vocabulary must start with <bos>, <eos>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate vocabulary word `{w}`"
                )));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, idx: usize) -> Option<&str> {
        self.words.get(idx).map(String::as_str)
    }

    /// `BOS w1 … wn EOS`
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        std::iter::once(BOS)
            .chain(tokens.iter().map(|t| self.index_of(t)))
            .chain(std::iter::once(EOS))
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .filter(|&&i| i != BOS && i != EOS)
            .map(|&i| {
                self.words
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| RESERVED[UNK].to_string())
            })
            .collect()
    }
}
