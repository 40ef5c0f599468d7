// SPDX-License-Identifier: MIT OR Apache-2.0

//! Word-level working vocabulary for toy tasks.
//!
//! Real-model tasks arrive pre-tokenized. For synthetic runs a declared
//! list of words stands in for a tokenizer: each whitespace-separated word
//! is one token id.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ToyVocab {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl TryFrom<Vec<String>> for ToyVocab {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        Self::new(words)
    }
}

impl From<ToyVocab> for Vec<String> {
    fn from(v: ToyVocab) -> Self {
        v.words
    }
}

impl ToyVocab {
    /// Ids follow the order of `words`; duplicates and blank words are
    /// rejected.
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::InvalidParameter(format!(
                    "vocabulary word {w:?} is not a single word"
                )));
            }
            if ids.insert(w.clone(), i as u32).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate vocabulary word {w:?}"
                )));
            }
        }
        Ok(Self { words, ids })
    }

    /// Sorted set of every word in `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = texts.into_iter().flat_map(str::split_whitespace).collect();
        Self::new(set.into_iter().map(str::to_string).collect()).expect("distinct words")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Result<u32> {
        self.ids
            .get(word)
            .copied()
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|i| self.word(*i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Id of `name`, which must encode to exactly one token.
    pub fn single_token(&self, name: &str) -> Result<u32> {
        let ids = self.encode(name)?;
        match ids.as_slice() {
            [one] => Ok(*one),
            _ => Err(Error::MultiTokenName {
                name: name.to_string(),
                ids,
            }),
        }
    }
}
