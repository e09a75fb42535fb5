//! BLEU, ROUGE-L and knowledge-base reconstruction scores.
//!
//! Reconstruction reads the slot values back out of a generated text and
//! compares them with the gold KB at two levels: individual (type, value)
//! pairs ("overall") and whole table rows ("inter-dependent").

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::corpus::{raw_tokens, tokenize, Example, KnowledgeBase};
use crate::error::{KbError, Result};
use crate::inference::Generation;

pub const ROUGE_BETA_SQ: f64 = 1.44;

fn is_punct_token(t: &str) -> bool {
    t.chars().all(|c| !c.is_alphanumeric())
}

/// Lowercased tokens of a value with trailing punctuation removed.
fn value_pattern(value: &str) -> Vec<String> {
    let mut toks = tokenize(value);
    while toks.len() > 1 && toks.last().is_some_and(|t| is_punct_token(t)) {
        toks.pop();
    }
    toks
}

/// A gold pair found in the text.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    /// Index of the gold triple.
    pub triple: usize,
    pub slot_type: String,
    pub slot_value: String,
    pub row: usize,
    /// Byte offsets of the mention in the generated text.
    pub start: usize,
    pub end: usize,
    /// Sentence the mention falls in (0-based, period-delimited).
    pub sentence: usize,
}

/// One reconstructed row: the mentions of a gold row's values that share a
/// sentence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowMatch {
    pub row: usize,
    pub sentence: usize,
    /// Distinct gold triples of the row mentioned in this sentence.
    pub matched: usize,
    pub gold: usize,
    /// Complete, and the first complete description of this row.
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructedKb {
    /// First mention of each matched gold triple.
    pub pairs: Vec<MatchedPair>,
    /// Mentions beyond the number of gold slots holding that value,
    /// attributed to one of those slots.
    pub repeats: Vec<MatchedPair>,
    /// Reconstructed rows in (row, sentence) order.
    pub rows: Vec<RowMatch>,
}

impl ReconstructedKb {
    pub fn redundant(&self) -> usize {
        self.repeats.len()
    }
}

/// Find every KB value mentioned in `text`.
///
/// Matching is case-insensitive and token based, longest value first. A
/// mention of a value held by several gold triples goes to an unused one
/// whose row is already mentioned in the same sentence, else to the first
/// unused one in KB order; once all are used, further mentions are repeats. Mentions of one gold row's
/// values within one sentence form a reconstructed row, which is correct
/// when it covers every gold value of the row. Only the first correct
/// description of a row counts; later ones are redundant.
pub fn reconstruct(text: &str, kb: &KnowledgeBase) -> ReconstructedKb {
    let spans: Vec<(usize, usize, String)> = raw_tokens(text)
        .into_iter()
        .map(|t| {
            let start = t.as_ptr() as usize - text.as_ptr() as usize;
            (start, start + t.len(), t.to_lowercase())
        })
        .collect();

    let mut patterns: Vec<(Vec<String>, Vec<usize>)> = Vec::new();
    for (i, t) in kb.triples().iter().enumerate() {
        let pat = value_pattern(&t.slot_value);
        match patterns.iter_mut().find(|(p, _)| *p == pat) {
            Some((_, owners)) => owners.push(i),
            None => patterns.push((pat, vec![i])),
        }
    }
    patterns.sort_by_key(|p| std::cmp::Reverse(p.0.len()));

    let mut taken: BTreeSet<usize> = BTreeSet::new();
    let mut pairs = Vec::new();
    let mut repeats = Vec::new();
    let mut sentence = 0;
    let mut i = 0;
    'scan: while i < spans.len() {
        for (pat, owners) in &patterns {
            let end = i + pat.len();
            if end <= spans.len() && spans[i..end].iter().map(|s| &s.2).eq(pat.iter()) {
                let in_sentence = |o: usize, found: &[MatchedPair]| {
                    found.iter().any(|m| m.sentence == sentence && m.row == kb.triples()[o].row)
                };
                let unused: Vec<usize> = owners.iter().copied().filter(|o| !taken.contains(o)).collect();
                let fresh = unused.iter().copied().find(|&o| in_sentence(o, &pairs)).or(unused.first().copied());
                // a repeat joins an owner already described in this sentence
                // when there is one
                let triple = fresh.unwrap_or_else(|| {
                    let all: Vec<MatchedPair> = pairs.iter().chain(&repeats).cloned().collect();
                    owners.iter().copied().find(|&o| in_sentence(o, &all)).unwrap_or(owners[owners.len() - 1])
                });
                let t = &kb.triples()[triple];
                let m = MatchedPair {
                    triple,
                    slot_type: t.slot_type.clone(),
                    slot_value: t.slot_value.clone(),
                    row: t.row,
                    start: spans[i].0,
                    end: spans[end - 1].1,
                    sentence,
                };
                if fresh.is_some() {
                    taken.insert(triple);
                    pairs.push(m);
                } else {
                    repeats.push(m);
                }
                i = end;
                continue 'scan;
            }
        }
        if spans[i].2 == "." {
            sentence += 1;
        }
        i += 1;
    }

    let mut groups: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for m in pairs.iter().chain(&repeats) {
        groups.entry((m.row, m.sentence)).or_default().insert(m.triple);
    }
    let gold_rows = kb.row_groups();
    let mut described = BTreeSet::new();
    let rows = groups
        .into_iter()
        .map(|((row, sentence), triples)| {
            let gold = gold_rows[row - 1].len();
            let complete = triples.len() == gold;
            RowMatch {
                row,
                sentence,
                matched: triples.len(),
                gold,
                correct: complete && described.insert(row),
            }
        })
        .collect();
    ReconstructedKb { pairs, repeats, rows }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub predicted: usize,
    pub correct: usize,
    pub gold: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.predicted += other.predicted;
        self.correct += other.correct;
        self.gold += other.gold;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when nothing was predicted, so precision is reported as 0.
    pub no_predictions: bool,
}

pub fn prf(c: Counts) -> Result<Prf> {
    if c.correct > c.predicted || c.correct > c.gold {
        return Err(KbError::Corpus(format!(
            "inconsistent counts: {} correct of {} predicted, {} gold",
            c.correct, c.predicted, c.gold
        )));
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (p, r) = (ratio(c.correct, c.predicted), ratio(c.correct, c.gold));
    Ok(Prf {
        precision: p,
        recall: r,
        f1: if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 },
        no_predictions: c.predicted == 0,
    })
}

impl ReconstructedKb {
    /// Pair-level counts. Redundant mentions count as predictions.
    pub fn overall_counts(&self, kb: &KnowledgeBase) -> Counts {
        Counts {
            predicted: self.pairs.len() + self.repeats.len(),
            correct: self.pairs.len(),
            gold: kb.len(),
        }
    }

    /// Row-level counts. Every reconstructed row is a prediction.
    pub fn row_counts(&self, kb: &KnowledgeBase) -> Counts {
        Counts {
            predicted: self.rows.len(),
            correct: self.rows.iter().filter(|r| r.correct).count(),
            gold: kb.n_rows(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReconstructionReport {
    pub overall: Prf,
    pub interdependent: Prf,
    pub overall_counts: Counts,
    pub row_counts: Counts,
}

pub fn score_reconstruction(overall: Counts, rows: Counts) -> Result<ReconstructionReport> {
    Ok(ReconstructionReport {
        overall: prf(overall)?,
        interdependent: prf(rows)?,
        overall_counts: overall,
        row_counts: rows,
    })
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// (clipped matches, hypothesis n-gram total) for each order 1..=max_n.
fn ngram_stats(hyp: &[String], reference: &[String], max_n: usize) -> Vec<(usize, usize)> {
    (1..=max_n)
        .map(|n| {
            let r = ngrams(reference, n);
            let h = ngrams(hyp, n);
            let matched = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
            (matched, hyp.len().saturating_sub(n - 1))
        })
        .collect()
}

fn combine(stats: &[(usize, usize)], hyp_len: usize, ref_len: usize, smooth: bool) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for &(m, t) in stats {
        if t == 0 {
            continue;
        }
        let (m, t) = if smooth { (m + 1, t + 1) } else { (m, t) };
        if m == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / t as f64).ln();
        orders += 1;
    }
    let bp = if hyp_len < ref_len { (1.0 - ref_len as f64 / hyp_len as f64).exp() } else { 1.0 };
    bp * (log_sum / orders as f64).exp()
}

/// Corpus BLEU: clipped n-gram counts summed over all pairs, uniform
/// geometric mean over orders up to `max_n` that have at least one
/// hypothesis n-gram, brevity penalty from total lengths. No smoothing.
pub fn corpus_bleu(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(KbError::Corpus("BLEU needs one reference per hypothesis".into()));
    }
    let mut totals = vec![(0, 0); max_n];
    let (mut c, mut r) = (0, 0);
    for (h, rf) in hyps.iter().zip(refs) {
        if rf.is_empty() {
            return Err(KbError::Corpus("empty BLEU reference".into()));
        }
        for (acc, s) in totals.iter_mut().zip(ngram_stats(h, rf, max_n)) {
            acc.0 += s.0;
            acc.1 += s.1;
        }
        c += h.len();
        r += rf.len();
    }
    Ok(combine(&totals, c, r, false))
}

pub fn bleu(hyp: &[String], reference: &[String], max_n: usize) -> Result<f64> {
    corpus_bleu(&[hyp.to_vec()], &[reference.to_vec()], max_n)
}

/// Sentence BLEU with add-one smoothing, for per-example diagnostics.
pub fn sentence_bleu(hyp: &[String], reference: &[String], max_n: usize) -> f64 {
    combine(&ngram_stats(hyp, reference, max_n), hyp.len(), reference.len(), true)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with `β² = 1.44`.
pub fn rouge_l(hyp: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(hyp, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / hyp.len() as f64;
    let r = lcs / reference.len() as f64;
    (1.0 + ROUGE_BETA_SQ) * p * r / (r + ROUGE_BETA_SQ * p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleScore {
    pub entity_id: String,
    pub bleu: f64,
    pub rouge_l: f64,
    pub overall: Counts,
    pub rows: Counts,
    pub redundant: usize,
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub examples_scored: usize,
    /// Gold entities with no generation (scored as empty text).
    pub missing_generations: usize,
    pub no_predictions: bool,
    pub bleu: f64,
    pub rouge_l: f64,
    pub reconstruction: ReconstructionReport,
    pub examples: Vec<ExampleScore>,
}

/// Score generations against gold examples, matched by entity id.
/// Generations for unknown entities are ignored.
pub fn evaluate(gens: &[Generation], gold: &[Example]) -> Result<EvaluationReport> {
    let by_id: HashMap<&str, &Generation> = gens.iter().map(|g| (g.entity_id.as_str(), g)).collect();
    let mut hyps = Vec::with_capacity(gold.len());
    let mut refs = Vec::with_capacity(gold.len());
    let (mut overall, mut rows) = (Counts::default(), Counts::default());
    let mut examples = Vec::with_capacity(gold.len());
    let mut rouge_sum = 0.0;
    let mut missing = 0;
    for ex in gold {
        let g = by_id.get(ex.kb.entity_id());
        missing += usize::from(g.is_none());
        let text = g.map_or("", |g| g.output.as_str());
        let h = tokenize(text);
        let r = tokenize(&ex.text);
        let rec = reconstruct(text, &ex.kb);
        let (oc, rc) = (rec.overall_counts(&ex.kb), rec.row_counts(&ex.kb));
        overall.add(oc);
        rows.add(rc);
        let rl = rouge_l(&h, &r);
        rouge_sum += rl;
        examples.push(ExampleScore {
            entity_id: ex.kb.entity_id().to_string(),
            bleu: sentence_bleu(&h, &r, 4),
            rouge_l: rl,
            overall: oc,
            rows: rc,
            redundant: rec.redundant(),
            missing: g.is_none(),
        });
        hyps.push(h);
        refs.push(r);
    }
    let reconstruction = score_reconstruction(overall, rows)?;
    Ok(EvaluationReport {
        examples_scored: gold.len(),
        missing_generations: missing,
        no_predictions: overall.predicted == 0,
        bleu: if gold.is_empty() { 0.0 } else { corpus_bleu(&hyps, &refs, 4)? },
        rouge_l: if gold.is_empty() { 0.0 } else { rouge_sum / gold.len() as f64 },
        reconstruction,
        examples,
    })
}
