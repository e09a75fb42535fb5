use serde::Serialize;

use super::{sentences, tokenize, Example};
use crate::error::{KbError, Result};

/// Corpus-level averages in the style of a dataset statistics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub entities: usize,
    pub slots_per_sentence: f64,
    pub words_per_sentence: f64,
    pub slots_per_table: f64,
    pub words_per_entity: f64,
    pub sentences_per_entity: f64,
}

/// Words are tokens containing at least one letter or digit, counted in
/// the raw reference (a multi-word value counts each word). Slots are
/// value mentions in the collapsed reference.
pub fn stats(examples: &[Example]) -> Result<CorpusStats> {
    if examples.is_empty() {
        return Err(KbError::Corpus("cannot compute statistics of an empty corpus".into()));
    }
    let (mut words, mut sents, mut slots, mut triples) = (0usize, 0usize, 0usize, 0usize);
    for ex in examples {
        words += tokenize(&ex.text)
            .iter()
            .filter(|w| w.chars().any(char::is_alphanumeric))
            .count();
        sents += sentences(&ex.reference).len();
        slots += ex.reference.iter().filter(|t| t.is_value()).count();
        triples += ex.kb.len();
    }
    let n = examples.len() as f64;
    let per_sentence = |x: usize| if sents == 0 { 0.0 } else { x as f64 / sents as f64 };
    Ok(CorpusStats {
        entities: examples.len(),
        slots_per_sentence: per_sentence(slots),
        words_per_sentence: per_sentence(words),
        slots_per_table: triples as f64 / n,
        words_per_entity: words as f64 / n,
        sentences_per_entity: sents as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::KnowledgeBase;

    #[test]
    fn direct_counts() {
        let kb = KnowledgeBase::new(
            "e",
            (1..=8).map(|i| (format!("T{i}"), format!("v{i}"), i)).collect::<Vec<_>>(),
        )
        .unwrap();
        // 20 words, two sentences, three value mentions
        let text = "v1 was born in v2 and works as a v3 in the city of somewhere today . She is well known .";
        let ex = Example::new(kb, text).unwrap();
        let s = stats(&[ex]).unwrap();
        assert_eq!(s.entities, 1);
        assert_eq!(s.slots_per_table, 8.0);
        assert_eq!(s.sentences_per_entity, 2.0);
        assert_eq!(s.words_per_entity, 20.0);
        assert_eq!(s.words_per_sentence, 10.0);
        assert_eq!(s.slots_per_sentence, 1.5);
        assert!(stats(&[]).is_err());
    }
}
