//! Requests, sentences and strategy labels, plus persistence, vocabulary,
//! splitting and the planted synthetic generator.

mod io;
mod split;
mod synth;
mod vocab;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_corpus, save_corpus, write_corpus_jsonl};
pub use split::{split, SplitCounts, Splits};
pub use synth::{generate_synthetic, GenConfig, SuccessRule, TriggerPattern, TARGET_MARGINALS};
pub use vocab::{build_vocab, Vocab, BOS, EOS_TOKEN, PAD, UNK};

/// One of the six sentence-level persuasion strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyLabel {
    Concreteness,
    Reciprocity,
    Impact,
    Credibility,
    Politeness,
    Other,
}

impl StrategyLabel {
    pub const COUNT: usize = 6;

    pub const ALL: [StrategyLabel; 6] = [
        StrategyLabel::Concreteness,
        StrategyLabel::Reciprocity,
        StrategyLabel::Impact,
        StrategyLabel::Credibility,
        StrategyLabel::Politeness,
        StrategyLabel::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Lowercase name used on disk.
    pub fn name(self) -> &'static str {
        match self {
            StrategyLabel::Concreteness => "concreteness",
            StrategyLabel::Reciprocity => "reciprocity",
            StrategyLabel::Impact => "impact",
            StrategyLabel::Credibility => "credibility",
            StrategyLabel::Politeness => "politeness",
            StrategyLabel::Other => "other",
        }
    }

    /// Two-letter abbreviation (`Co`, `Re`, ...).
    pub fn short(self) -> &'static str {
        match self {
            StrategyLabel::Concreteness => "Co",
            StrategyLabel::Reciprocity => "Re",
            StrategyLabel::Impact => "Im",
            StrategyLabel::Credibility => "Cr",
            StrategyLabel::Politeness => "Po",
            StrategyLabel::Other => "Ot",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            StrategyLabel::Concreteness => "Concreteness",
            StrategyLabel::Reciprocity => "Reciprocity",
            StrategyLabel::Impact => "Impact",
            StrategyLabel::Credibility => "Credibility",
            StrategyLabel::Politeness => "Politeness",
            StrategyLabel::Other => "Other",
        }
    }
}

impl fmt::Display for StrategyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for StrategyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        StrategyLabel::ALL
            .into_iter()
            .find(|l| l.name() == lower || l.short().eq_ignore_ascii_case(&lower))
            .ok_or_else(|| Error::Input(format!("unknown strategy label `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub label: Option<StrategyLabel>,
}

impl Sentence {
    pub fn new(text: impl Into<String>, label: Option<StrategyLabel>) -> Self {
        Self {
            text: text.into(),
            label,
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub sentences: Vec<Sentence>,
    pub success: bool,
}

impl Request {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn is_fully_labeled(&self) -> bool {
        !self.sentences.is_empty() && self.sentences.iter().all(|s| s.label.is_some())
    }

    pub fn gold_labels(&self) -> Option<Vec<StrategyLabel>> {
        self.sentences.iter().map(|s| s.label).collect()
    }

    pub fn strip_labels(&self) -> Request {
        Request {
            id: self.id.clone(),
            sentences: self
                .sentences
                .iter()
                .map(|s| Sentence::new(s.text.clone(), None))
                .collect(),
            success: self.success,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Loaded,
    Synthetic { seed: u64, config_hash: String },
    Derived,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub requests: Vec<Request>,
    pub provenance: Provenance,
}

impl Corpus {
    /// Builds a corpus after checking ids are pairwise distinct.
    pub fn new(requests: Vec<Request>, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::with_capacity(requests.len());
        for r in &requests {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate request id `{}`", r.id)));
            }
        }
        Ok(Self {
            requests,
            provenance,
        })
    }

    pub fn empty() -> Self {
        Self {
            requests: Vec::new(),
            provenance: Provenance::Derived,
        }
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Request> {
        self.requests.iter()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.requests.iter().flat_map(|r| r.sentences.iter())
    }

    pub fn num_sentences(&self) -> usize {
        self.requests.iter().map(Request::len).sum()
    }

    pub fn success_rate(&self) -> Option<f64> {
        if self.requests.is_empty() {
            None
        } else {
            let s = self.requests.iter().filter(|r| r.success).count();
            Some(s as f64 / self.requests.len() as f64)
        }
    }

    /// Concatenate corpora; ids must stay unique.
    pub fn concat(parts: &[&Corpus]) -> Result<Corpus> {
        let requests = parts.iter().flat_map(|c| c.requests.iter().cloned()).collect();
        Corpus::new(requests, Provenance::Derived)
    }
}

/// Lowercase, then split on whitespace; every punctuation character becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() && !ch.is_control() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Fraction of labeled sentences carrying each strategy; all six keys present.
pub fn strategy_distribution(corpus: &Corpus) -> Result<BTreeMap<StrategyLabel, f64>> {
    let mut counts = [0usize; StrategyLabel::COUNT];
    for s in corpus.sentences() {
        if let Some(l) = s.label {
            counts[l.index()] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyInput("corpus has no labeled sentences".into()));
    }
    Ok(StrategyLabel::ALL
        .into_iter()
        .map(|l| (l, counts[l.index()] as f64 / total as f64))
        .collect())
}
