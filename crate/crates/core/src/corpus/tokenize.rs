//! Tokenization and slot-value collapsing.
//!
//! Text is split on whitespace, and every character that is neither
//! alphanumeric nor whitespace becomes a token of its own. Words are
//! lowercased. Before that, each occurrence of a KB value (compared
//! case-insensitively, token by token) is replaced by a single
//! [`Token::Value`], longest value first.

use super::{KnowledgeBase, Token};

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Case-preserving pieces of `text`.
pub fn raw_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || is_punct(c) {
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
            if is_punct(c) {
                out.push(&text[i..i + c.len_utf8()]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    raw_tokens(text).into_iter().map(str::to_lowercase).collect()
}

/// Matching key for a slot value: lowercased tokens joined by single spaces.
pub fn normalize_value(value: &str) -> String {
    tokenize(value).join(" ")
}

/// Tokenize `text`, replacing every occurrence of a KB slot value with one
/// unit token. Overlaps resolve to the longest value.
pub fn collapse_values(text: &str, kb: &KnowledgeBase) -> Vec<Token> {
    let words = tokenize(text);
    let mut values: Vec<(Vec<String>, &str)> = kb
        .unique_values()
        .into_iter()
        .map(|v| (tokenize(v), v))
        .collect();
    values.sort_by_key(|v| std::cmp::Reverse(v.0.len()));

    let mut out = Vec::with_capacity(words.len());
    let mut i = 0;
    'scan: while i < words.len() {
        for (toks, surface) in &values {
            let end = i + toks.len();
            if end <= words.len() && words[i..end] == toks[..] {
                out.push(Token::Value((*surface).to_string()));
                i = end;
                continue 'scan;
            }
        }
        out.push(Token::Word(words[i].clone()));
        i += 1;
    }
    out
}

/// Join token surfaces with single spaces.
pub fn render(tokens: &[Token]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(t.surface());
    }
    s
}

/// Split at period tokens. The period stays with its sentence; empty
/// segments are dropped.
pub fn sentences(tokens: &[Token]) -> Vec<&[Token]> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if matches!(t, Token::Word(w) if w == ".") {
            if i > start {
                out.push(&tokens[start..=i]);
            }
            start = i + 1;
        }
    }
    if start < tokens.len() {
        out.push(&tokens[start..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::silvi_jan;

    fn w(s: &str) -> Token {
        Token::Word(s.into())
    }

    #[test]
    fn splits_punctuation() {
        assert_eq!(
            tokenize("Hapoel Tel Aviv F.C.(women), played."),
            vec!["hapoel", "tel", "aviv", "f", ".", "c", ".", "(", "women", ")", ",", "played", "."]
        );
    }

    #[test]
    fn collapses_name() {
        let kb = KnowledgeBase::new("e", [("Name", "Silvi Jan", 1)]).unwrap();
        assert_eq!(
            collapse_values("Silvi Jan is a forward", &kb),
            vec![Token::Value("Silvi Jan".into()), w("is"), w("a"), w("forward")]
        );
    }

    #[test]
    fn longest_value_wins() {
        let kb = KnowledgeBase::new("e", [("City", "Tel Aviv", 1), ("Team", "ASA Tel Aviv University", 2)]).unwrap();
        let toks = collapse_values("She joined ASA Tel Aviv University in Tel Aviv", &kb);
        assert_eq!(
            toks,
            vec![
                w("she"),
                w("joined"),
                Token::Value("ASA Tel Aviv University".into()),
                w("in"),
                Token::Value("Tel Aviv".into()),
            ]
        );
    }

    #[test]
    fn case_and_spacing_insensitive() {
        let kb = silvi_jan();
        let toks = collapse_values("SILVI   jan played for hapoel tel aviv f.c. (women) .", &kb);
        assert_eq!(toks[0], Token::Value("Silvi Jan".into()));
        assert_eq!(toks[3], Token::Value("Hapoel Tel Aviv F.C.(women)".into()));
        assert_eq!(toks.len(), 5);
    }

    #[test]
    fn nested_value_inside_longer_value() {
        let kb = silvi_jan();
        let toks = collapse_values("She played for Israel women's national football team and Israel.", &kb);
        let values: Vec<_> = toks.iter().filter(|t| t.is_value()).map(Token::surface).collect();
        assert_eq!(values, vec!["Israel women's national football team", "Israel"]);
    }

    #[test]
    fn plain_text_is_just_tokenized() {
        let kb = silvi_jan();
        assert_eq!(collapse_values("A retired Player.", &kb), vec![w("a"), w("retired"), w("player"), w(".")]);
    }

    #[test]
    fn sentences_split_on_periods() {
        let toks = vec![w("a"), w("."), w("b"), w("c"), w("."), w("d")];
        let s = sentences(&toks);
        assert_eq!(s.len(), 3);
        assert_eq!(s[1], &toks[2..5]);
        assert!(sentences(&[]).is_empty());
    }
}
