//! JSONL corpus files: one `{"entity_id", "triples", "reference"}` object
//! per line. Backward rows are derived on load and never written.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Example, KnowledgeBase};
use crate::error::{KbError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTriple {
    #[serde(rename = "type")]
    pub slot_type: String,
    pub value: String,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub entity_id: String,
    pub triples: Vec<RawTriple>,
    pub reference: String,
}

impl RawExample {
    pub fn from_example(ex: &Example) -> Self {
        Self {
            entity_id: ex.kb.entity_id().to_string(),
            triples: ex
                .kb
                .triples()
                .iter()
                .map(|t| RawTriple {
                    slot_type: t.slot_type.clone(),
                    value: t.slot_value.clone(),
                    row: t.row,
                })
                .collect(),
            reference: ex.text.clone(),
        }
    }

    pub fn into_example(self) -> Result<Example> {
        let kb = KnowledgeBase::new(
            self.entity_id,
            self.triples.into_iter().map(|t| (t.slot_type, t.value, t.row)),
        )?;
        Example::new(kb, self.reference)
    }
}

/// Parse JSONL text. Blank lines are skipped; errors carry 1-based line
/// numbers.
pub fn parse_corpus(text: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| KbError::Parse { line: i + 1, message };
        let raw: RawExample = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        out.push(raw.into_example().map_err(|e| at(e.to_string()))?);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Example>> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

pub fn write_corpus(path: &Path, examples: &[Example]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut out, &RawExample::from_example(ex))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
