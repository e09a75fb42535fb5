//! Model input sequences for the four input formats.

use std::fmt;
use std::str::FromStr;

use super::KnowledgeBase;
use crate::error::{KbError, Result};

/// How a KB is turned into the encoder's input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Linearization {
    /// Types and values alternate as separate items.
    Seq2Seq,
    /// Values only.
    ValuesOnly,
    /// One (type, value) item per triple.
    TypedPairs,
    /// One (type, value, row, row_back) item per triple.
    TypedPositions,
}

impl Linearization {
    pub const ALL: [Linearization; 4] = [Self::Seq2Seq, Self::ValuesOnly, Self::TypedPairs, Self::TypedPositions];

    pub fn name(self) -> &'static str {
        match self {
            Self::Seq2Seq => "seq2seq",
            Self::ValuesOnly => "values_only",
            Self::TypedPairs => "typed_pairs",
            Self::TypedPositions => "typed_positions",
        }
    }
}

impl fmt::Display for Linearization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Linearization {
    type Err = KbError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| KbError::Corpus(format!("unknown linearization {s:?}; expected seq2seq, values_only, typed_pairs or typed_positions")))
    }
}

/// One encoder input item. Absent fields embed as zero vectors, and so do
/// positions equal to 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InputItem {
    pub slot_type: Option<String>,
    pub slot_value: Option<String>,
    pub row: usize,
    pub row_back: usize,
    /// Index of the KB triple this item came from.
    pub triple: usize,
}

pub fn linearize(kb: &KnowledgeBase, mode: Linearization) -> Vec<InputItem> {
    let mut out = Vec::with_capacity(kb.len() * 2);
    for (i, t) in kb.triples().iter().enumerate() {
        let item = |slot_type: Option<&str>, slot_value: Option<&str>, positioned: bool| InputItem {
            slot_type: slot_type.map(str::to_string),
            slot_value: slot_value.map(str::to_string),
            row: if positioned { t.row } else { 0 },
            row_back: if positioned { t.row_back } else { 0 },
            triple: i,
        };
        match mode {
            Linearization::Seq2Seq => {
                out.push(item(Some(&t.slot_type), None, false));
                out.push(item(None, Some(&t.slot_value), false));
            }
            Linearization::ValuesOnly => out.push(item(None, Some(&t.slot_value), false)),
            Linearization::TypedPairs => out.push(item(Some(&t.slot_type), Some(&t.slot_value), false)),
            Linearization::TypedPositions => out.push(item(Some(&t.slot_type), Some(&t.slot_value), true)),
        }
    }
    out
}
