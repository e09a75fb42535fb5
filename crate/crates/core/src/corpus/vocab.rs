use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{normalize_value, Example, Token};
use crate::error::{KbError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Token/id bijection with four fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: BTreeMap<String, usize>,
}

impl Vocabulary {
    fn with_tokens(extra: impl IntoIterator<Item = String>, counts: BTreeMap<String, usize>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(extra);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index, counts }
    }

    /// Keep tokens with `count >= min_freq`, plus any token for which
    /// `always_keep` holds. Ids follow descending count, ties broken by the
    /// token text.
    pub fn from_counts(counts: BTreeMap<String, usize>, min_freq: usize, always_keep: impl Fn(&str) -> bool) -> Self {
        let mut kept: Vec<(&String, &usize)> = counts
            .iter()
            .filter(|(t, &c)| !RESERVED.contains(&t.as_str()) && (c >= min_freq || always_keep(t)))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let kept: Vec<String> = kept.into_iter().map(|(t, _)| t.clone()).collect();
        Self::with_tokens(kept, counts)
    }

    /// Id for a token, falling back to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Corpus frequency seen at build time (empty after loading from disk).
    pub fn count(&self, token: &str) -> usize {
        self.counts.get(token).copied().unwrap_or(0)
    }

    fn to_map(&self) -> BTreeMap<String, usize> {
        self.tokens
            .iter()
            .enumerate()
            .skip(RESERVED.len())
            .map(|(i, t)| (t.clone(), i))
            .collect()
    }

    fn from_map(map: BTreeMap<String, usize>) -> Result<Self> {
        let mut tokens = vec![None; map.len() + RESERVED.len()];
        for (i, r) in RESERVED.iter().enumerate() {
            tokens[i] = Some(r.to_string());
        }
        for (t, id) in map {
            if id < RESERVED.len() || id >= tokens.len() || tokens[id].is_some() {
                return Err(KbError::Corpus(format!("bad vocabulary id {id} for {t:?}")));
            }
            tokens[id] = Some(t);
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.expect("ids are dense")).collect();
        Ok(Self::with_tokens(tokens.into_iter().skip(RESERVED.len()), BTreeMap::new()))
    }
}

/// Output-word vocabulary from the reference texts.
///
/// Words below `min_freq` are left out (they map to UNK). Slot-value unit
/// tokens are always kept.
pub fn build_vocab(examples: &[Example], min_freq: usize) -> Result<Vocabulary> {
    if examples.is_empty() {
        return Err(KbError::Corpus("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts = BTreeMap::new();
    for ex in examples {
        for tok in &ex.reference {
            *counts.entry(tok.key()).or_insert(0) += 1;
        }
    }
    Ok(Vocabulary::from_counts(counts, min_freq, |t| t.starts_with('⟨')))
}

/// Output words plus the slot-type and slot-value embedding vocabularies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabSet {
    pub words: Vocabulary,
    pub types: Vocabulary,
    /// Keyed by normalized value; values below `min_freq` share UNK.
    pub values: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    version: u32,
    reserved: Vec<String>,
    words: BTreeMap<String, usize>,
    types: BTreeMap<String, usize>,
    values: BTreeMap<String, usize>,
}

impl VocabSet {
    pub fn build(examples: &[Example], min_freq: usize) -> Result<Self> {
        let words = build_vocab(examples, min_freq)?;
        let mut type_counts = BTreeMap::new();
        let mut value_counts = BTreeMap::new();
        for ex in examples {
            for t in ex.kb.triples() {
                *type_counts.entry(t.slot_type.clone()).or_insert(0) += 1;
                *value_counts.entry(normalize_value(&t.slot_value)).or_insert(0) += 1;
            }
        }
        Ok(Self {
            words,
            types: Vocabulary::from_counts(type_counts, 1, |_| false),
            values: Vocabulary::from_counts(value_counts, min_freq, |_| false),
        })
    }

    pub fn type_id(&self, slot_type: &str) -> usize {
        self.types.id(slot_type)
    }

    pub fn value_id(&self, value: &str) -> usize {
        self.values.id(&normalize_value(value))
    }

    pub fn word_id(&self, token: &Token) -> Option<usize> {
        self.words.get(&token.key())
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            format: "kbgen-vocab".into(),
            version: 1,
            reserved: RESERVED.iter().map(|s| s.to_string()).collect(),
            words: self.words.to_map(),
            types: self.types.to_map(),
            values: self.values.to_map(),
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.format != "kbgen-vocab" || file.reserved != RESERVED {
            return Err(KbError::Corpus("not a kbgen vocabulary file".into()));
        }
        Ok(Self {
            words: Vocabulary::from_map(file.words)?,
            types: Vocabulary::from_map(file.types)?,
            values: Vocabulary::from_map(file.values)?,
        })
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
