//! Tagged sentences and vocabularies.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("label {label:?} at position {position} is not in the label vocabulary")]
    UnknownLabel { label: String, position: usize },
    #[error("vocabulary entry {0:?} appears twice")]
    DuplicateEntry(String),
    #[error("word vocabulary must start with {:?}", Vocab::UNK)]
    MissingUnk,
    #[error("sentence has {tokens} tokens but {labels} labels")]
    Ragged { tokens: usize, labels: usize },
    #[error("empty sentence")]
    Empty,
}

/// A sentence with its tokens and (possibly unassigned) label ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub gold_labels: Vec<usize>,
    pub labels: Vec<String>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<String>, labels: Vec<String>) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::Empty);
        }
        if tokens.len() != labels.len() {
            return Err(CorpusError::Ragged {
                tokens: tokens.len(),
                labels: labels.len(),
            });
        }
        Ok(Self {
            tokens,
            token_ids: Vec::new(),
            gold_labels: Vec::new(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Fills `token_ids` (unknown words map to `<unk>`) and `gold_labels`.
    pub fn assign_ids(&mut self, words: &Vocab, labels: &LabelVocab) -> Result<(), CorpusError> {
        self.token_ids = self.tokens.iter().map(|t| words.id(t)).collect();
        self.gold_labels = self
            .labels
            .iter()
            .enumerate()
            .map(|(position, l)| {
                labels.id(l).ok_or_else(|| CorpusError::UnknownLabel {
                    label: l.clone(),
                    position,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(())
    }

    /// Fills `token_ids` only; for unlabeled input.
    pub fn assign_token_ids(&mut self, words: &Vocab) {
        self.token_ids = self.tokens.iter().map(|t| words.id(t)).collect();
    }
}

/// Word vocabulary; index 0 is always `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub const UNK: &'static str = "<unk>";

    pub fn from_items(items: Vec<String>) -> Result<Self, CorpusError> {
        if items.first().map(String::as_str) != Some(Self::UNK) {
            return Err(CorpusError::MissingUnk);
        }
        let mut index = BTreeMap::new();
        for (i, w) in items.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(CorpusError::DuplicateEntry(w.clone()));
            }
        }
        Ok(Self { items, index })
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Label vocabulary, indexed by first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl LabelVocab {
    pub fn from_labels(labels: Vec<String>) -> Result<Self, CorpusError> {
        let mut index = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(CorpusError::DuplicateEntry(l.clone()));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Builds the word vocabulary (words seen at least `min_count` times, by
/// descending count then alphabetically) and the label vocabulary.
pub fn build_vocab(sentences: &[TaggedSentence], min_count: usize) -> (Vocab, LabelVocab) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    for s in sentences {
        for t in &s.tokens {
            if t != Vocab::UNK {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        for l in &s.labels {
            if seen.insert(l.as_str(), ()).is_none() {
                labels.push(l.clone());
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    // BTreeMap iteration is alphabetical; a stable sort keeps that for ties.
    kept.sort_by(|a, b| b.1.cmp(&a.1));
    let mut items = Vec::with_capacity(kept.len() + 1);
    items.push(Vocab::UNK.to_string());
    items.extend(kept.into_iter().map(|(w, _)| w.to_string()));
    let words = Vocab::from_items(items).expect("unique by construction");
    let labels = LabelVocab::from_labels(labels).expect("unique by construction");
    (words, labels)
}
