use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const EOS: usize = 2;
pub const PERSONA_SLOT: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";
pub const PERSONA_TOKEN: &str = "@persona";

pub const RESERVED: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, EOS_TOKEN, PERSONA_TOKEN];

/// Bidirectional word/id map. Ids 0..4 are always the reserved symbols.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    id_to_word: Vec<String>,
    word_to_id: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_words(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Reserved symbols followed by `words` in the given order; repeats and
    /// reserved surface forms are skipped.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            id_to_word: Vec::new(),
            word_to_id: HashMap::new(),
        };
        for w in RESERVED {
            vocab.push(w.to_string());
        }
        for w in words {
            vocab.push(w.into());
        }
        vocab
    }

    /// Counts every token and keeps those seen at least `min_count` times.
    /// Ids after the reserved block follow descending frequency, ties broken
    /// lexicographically.
    pub fn build<'a, I>(tokens: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut total = 0usize;
        for t in tokens {
            *counts.entry(t).or_default() += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyDataset("no tokens to build a vocabulary from".into()));
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && !RESERVED.contains(w))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_words(kept.into_iter().map(|(w, _)| w)))
    }

    fn push(&mut self, word: String) {
        if self.word_to_id.contains_key(&word) {
            return;
        }
        self.word_to_id.insert(word.clone(), self.id_to_word.len());
        self.id_to_word.push(word);
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.word_to_id.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_to_id.contains_key(word)
    }

    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.id_to_word.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.id_to_word
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Encodes and reports how many tokens fell back to UNK.
    pub fn encode_counting_unk<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<usize>, usize) {
        let mut unk = 0;
        let ids = tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                self.get(t).unwrap_or_else(|| {
                    unk += 1;
                    UNK
                })
            })
            .collect();
        (ids, unk)
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.word(id)
                    .map(str::to_string)
                    .ok_or(Error::TokenOutOfRange { id, size: self.len() })
            })
            .collect()
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.id_to_word
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = String;

    fn try_from(words: Vec<String>) -> std::result::Result<Self, String> {
        if words.len() < RESERVED.len() || words[..RESERVED.len()] != RESERVED {
            return Err("vocabulary must start with the reserved symbols".into());
        }
        let vocab = Vocabulary::from_words(words[RESERVED.len()..].iter().cloned());
        if vocab.len() != words.len() {
            return Err("vocabulary contains duplicate words".into());
        }
        Ok(vocab)
    }
}
