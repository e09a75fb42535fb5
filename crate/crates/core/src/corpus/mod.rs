//! Knowledge bases, reference texts, vocabularies and corpus utilities.

mod io;
mod linearize;
mod split;
mod stats;
mod synth;
mod tokenize;
mod vocab;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{KbError, Result};

pub use io::{load_corpus, parse_corpus, write_corpus, RawExample, RawTriple};
pub use linearize::{linearize, InputItem, Linearization};
pub use split::split;
pub use stats::{stats, CorpusStats};
pub use synth::{synth_corpus, Schema, SlotSpec, SubSlotSpec, ValueSource};
pub use tokenize::{collapse_values, normalize_value, raw_tokens, render, sentences, tokenize};
pub use vocab::{build_vocab, Vocabulary, VocabSet, BOS, EOS, PAD, UNK};

/// One fact: a slot type, its value, and the table row holding it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub slot_type: String,
    pub slot_value: String,
    /// Forward row index, starting at 1.
    pub row: usize,
    /// Backward row index `R - row + 1`.
    pub row_back: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    entity_id: String,
    triples: Vec<Triple>,
    rows: usize,
}

impl KnowledgeBase {
    /// Build from `(slot type, slot value, row)` entries.
    ///
    /// Rows must start at 1, never decrease, and never skip a number, so
    /// facts sharing a row are adjacent. Backward rows are derived.
    pub fn new<S, V>(entity_id: impl Into<String>, entries: impl IntoIterator<Item = (S, V, usize)>) -> Result<Self>
    where
        S: Into<String>,
        V: Into<String>,
    {
        let entity_id = entity_id.into();
        let mut triples = Vec::new();
        let mut prev = 0usize;
        for (i, (slot_type, slot_value, row)) in entries.into_iter().enumerate() {
            let slot_type: String = slot_type.into();
            let slot_value: String = slot_value.into();
            if slot_type.trim().is_empty() || slot_value.trim().is_empty() {
                return Err(KbError::InvalidKb(format!("triple {i} has an empty slot type or value")));
            }
            if tokenize(&slot_value).is_empty() {
                return Err(KbError::InvalidKb(format!("triple {i} value {slot_value:?} has no tokens")));
            }
            if row == 0 {
                return Err(KbError::InvalidKb(format!("triple {i} has row 0; rows start at 1")));
            }
            if row < prev {
                return Err(KbError::InvalidKb(format!("rows must be nondecreasing ({prev} then {row})")));
            }
            if row > prev + 1 {
                return Err(KbError::InvalidKb(format!("non-contiguous rows ({prev} then {row})")));
            }
            prev = row;
            triples.push(Triple {
                slot_type: slot_type.trim().to_string(),
                slot_value: slot_value.trim().to_string(),
                row,
                row_back: 0,
            });
        }
        if triples.is_empty() {
            return Err(KbError::InvalidKb(format!("entity {entity_id:?} has no triples")));
        }
        let rows = prev;
        for t in &mut triples {
            t.row_back = rows - t.row + 1;
        }
        Ok(Self {
            entity_id,
            triples,
            rows,
        })
    }

    pub fn entity_id(&self) -> &str {
        &self.entity_id
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Number of table rows `R`.
    pub fn n_rows(&self) -> usize {
        self.rows
    }

    /// Distinct slot values in first-appearance order, compared after
    /// normalization. The surface form of the first occurrence is kept.
    pub fn unique_values(&self) -> Vec<&str> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for t in &self.triples {
            let key = normalize_value(&t.slot_value);
            if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(key) {
                e.insert(out.len());
                out.push(t.slot_value.as_str());
            }
        }
        out
    }

    /// For each triple, the index of its value in [`Self::unique_values`].
    pub fn value_groups(&self) -> Vec<usize> {
        let mut seen: HashMap<String, usize> = HashMap::new();
        self.triples
            .iter()
            .map(|t| {
                let next = seen.len();
                *seen.entry(normalize_value(&t.slot_value)).or_insert(next)
            })
            .collect()
    }

    /// Canonical surface form for a value, if the KB holds it.
    pub fn canonical_value(&self, value: &str) -> Option<&str> {
        let key = normalize_value(value);
        self.triples
            .iter()
            .find(|t| normalize_value(&t.slot_value) == key)
            .map(|t| t.slot_value.as_str())
    }

    /// Triple indices grouped by row, in row order.
    pub fn row_groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.rows];
        for (i, t) in self.triples.iter().enumerate() {
            groups[t.row - 1].push(i);
        }
        groups
    }
}

/// Reference token: either an ordinary lowercased word or a whole slot value
/// treated as one unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Word(String),
    Value(String),
}

impl Token {
    /// Vocabulary key. Values are normalized and wrapped in angle brackets,
    /// which the tokenizer never leaves inside a word.
    pub fn key(&self) -> String {
        match self {
            Token::Word(w) => w.clone(),
            Token::Value(v) => format!("⟨{}⟩", normalize_value(v)),
        }
    }

    pub fn from_key(key: &str) -> Self {
        match key.strip_prefix('⟨').and_then(|k| k.strip_suffix('⟩')) {
            Some(v) => Token::Value(v.to_string()),
            None => Token::Word(key.to_string()),
        }
    }

    /// Text as it should appear in generated output.
    pub fn surface(&self) -> &str {
        match self {
            Token::Word(w) | Token::Value(w) => w,
        }
    }

    pub fn is_value(&self) -> bool {
        matches!(self, Token::Value(_))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// A KB paired with its reference description.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub kb: KnowledgeBase,
    /// Original reference text.
    pub text: String,
    /// Reference with slot values collapsed to unit tokens.
    pub reference: Vec<Token>,
}

impl Example {
    pub fn new(kb: KnowledgeBase, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let reference = collapse_values(&text, &kb);
        if reference.is_empty() {
            return Err(KbError::Corpus(format!("entity {:?} has an empty reference", kb.entity_id())));
        }
        Ok(Self { kb, text, reference })
    }
}
