//! Greedy and beam-search decoding, attention dumps and generation files.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use numkit::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::corpus::{render, KnowledgeBase, Token, EOS};
use crate::error::{KbError, Result};
use crate::generator::{decode_step, feed_token, final_distribution, initial_state, prepare, DecoderState, Gate, Prepared};
use crate::model::Model;

/// Anything that yields next-token log-probabilities step by step.
pub trait StepModel {
    type State: Clone;
    fn start(&mut self) -> Result<Self::State>;
    /// Log-probabilities of the next token, and the state after the step.
    fn step(&mut self, state: &Self::State) -> Result<(Vec<f64>, Self::State)>;
    /// State with `token` consumed as the next input.
    fn feed(&mut self, state: &Self::State, token: usize) -> Result<Self::State>;
    fn eos(&self) -> usize;
}

#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    /// Chosen ids, ending in EOS unless the length limit was hit.
    pub ids: Vec<usize>,
    pub logprob: f64,
    /// Post-step states, one per id.
    pub states: Vec<S>,
}

impl<S> Hypothesis<S> {
    pub fn normalized(&self) -> f64 {
        self.logprob / self.ids.len().max(1) as f64
    }

    pub fn finished_with(&self, eos: usize) -> bool {
        self.ids.last() == Some(&eos)
    }
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn greedy<M: StepModel>(model: &mut M, max_len: usize) -> Result<Hypothesis<M::State>> {
    let mut state = model.start()?;
    let mut hyp = Hypothesis {
        ids: Vec::new(),
        logprob: 0.0,
        states: Vec::new(),
    };
    for t in 0..max_len {
        let (logp, after) = model.step(&state)?;
        let tok = argmax(&logp);
        hyp.ids.push(tok);
        hyp.logprob += logp[tok];
        hyp.states.push(after.clone());
        if tok == model.eos() || t + 1 == max_len {
            break;
        }
        state = model.feed(&after, tok)?;
    }
    Ok(hyp)
}

/// Beam search ranked by log-probability divided by length.
///
/// Each round expands every live hypothesis by its `beam` best tokens and
/// keeps the `beam` best candidates by raw log-probability (ties: earlier
/// parent, then lower id). Candidates ending in EOS or reaching `max_len`
/// retire to a pool. Search stops when nothing is live or when the pool's
/// best normalized score is at least `logprob / max_len` of every live
/// hypothesis, which bounds what it could still reach.
pub fn beam_search<M: StepModel>(model: &mut M, beam: usize, max_len: usize) -> Result<Hypothesis<M::State>> {
    if beam == 0 {
        return Err(KbError::Config("beam must be at least 1".into()));
    }
    let eos = model.eos();
    let start = model.start()?;
    let mut live: Vec<(Hypothesis<M::State>, M::State)> = vec![(
        Hypothesis {
            ids: Vec::new(),
            logprob: 0.0,
            states: Vec::new(),
        },
        start,
    )];
    let mut pool: Vec<Hypothesis<M::State>> = Vec::new();
    while !live.is_empty() {
        // (parent, token, logprob, post-step state)
        let mut cands: Vec<(usize, usize, f64, M::State)> = Vec::new();
        for (p, (hyp, state)) in live.iter().enumerate() {
            let (logp, after) = model.step(state)?;
            let mut idx: Vec<usize> = (0..logp.len()).collect();
            idx.sort_by(|&a, &b| logp[b].partial_cmp(&logp[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            for &tok in idx.iter().take(beam) {
                cands.push((p, tok, hyp.logprob + logp[tok], after.clone()));
            }
        }
        cands.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        cands.truncate(beam);
        let mut next = Vec::with_capacity(beam);
        for (p, tok, lp, after) in cands {
            let parent = &live[p].0;
            let mut hyp = Hypothesis {
                ids: parent.ids.clone(),
                logprob: lp,
                states: parent.states.clone(),
            };
            hyp.ids.push(tok);
            hyp.states.push(after.clone());
            if tok == eos || hyp.ids.len() >= max_len {
                pool.push(hyp);
            } else {
                let fed = model.feed(&after, tok)?;
                next.push((hyp, fed));
            }
        }
        live = next;
        let pool_best = pool.iter().map(Hypothesis::normalized).fold(f64::NEG_INFINITY, f64::max);
        let live_bound = live
            .iter()
            .map(|(h, _)| h.logprob / max_len as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        if pool_best >= live_bound {
            break;
        }
    }
    // Highest normalized score; ties keep the earliest retired.
    let mut best: Option<Hypothesis<M::State>> = None;
    for h in pool {
        if best.as_ref().is_none_or(|b| h.normalized() > b.normalized()) {
            best = Some(h);
        }
    }
    best.ok_or_else(|| KbError::Config("beam search produced no hypothesis".into()))
}

/// State of [`TapeDecoder`]: the decoder state plus what the last step
/// produced.
#[derive(Debug, Clone, Copy)]
pub struct TapeState {
    pub decoder: DecoderState,
    pub alpha: Option<Var>,
    pub p_gen: Option<Var>,
}

/// A trained model bound to one KB, decoding on a single tape that all
/// hypotheses share.
pub struct TapeDecoder<'a> {
    pub tape: Tape<'a>,
    pub model: &'a Model,
    pub prep: Prepared,
    pub gate: Gate,
}

impl<'a> TapeDecoder<'a> {
    pub fn new(model: &'a Model, kb: &KnowledgeBase, gate: Gate) -> Result<Self> {
        let mut tape = Tape::new(&model.params);
        let prep = prepare(&mut tape, model, kb)?;
        Ok(Self { tape, model, prep, gate })
    }

    pub fn token(&self, id: usize) -> Token {
        self.prep.source.token(self.model, id)
    }
}

impl StepModel for TapeDecoder<'_> {
    type State = TapeState;

    fn start(&mut self) -> Result<TapeState> {
        Ok(TapeState {
            decoder: initial_state(&mut self.tape, self.model, &self.prep)?,
            alpha: None,
            p_gen: None,
        })
    }

    fn step(&mut self, state: &TapeState) -> Result<(Vec<f64>, TapeState)> {
        let out = decode_step(&mut self.tape, self.model, &self.prep, &state.decoder, self.gate)?;
        let dist = final_distribution(&self.tape, &self.prep, &out);
        let logp = dist.iter().map(|p| p.ln()).collect();
        Ok((
            logp,
            TapeState {
                decoder: out.state,
                alpha: Some(out.alpha),
                p_gen: out.p_gen,
            },
        ))
    }

    fn feed(&mut self, state: &TapeState, token: usize) -> Result<TapeState> {
        let tok = self.token(token);
        Ok(TapeState {
            decoder: feed_token(&mut self.tape, self.model, &state.decoder, &tok)?,
            ..*state
        })
    }

    fn eos(&self) -> usize {
        EOS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub alpha: Vec<f64>,
    pub p_gen: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    /// Extended-vocabulary ids, including a final EOS when one was emitted.
    pub ids: Vec<usize>,
    /// Output tokens without EOS.
    pub tokens: Vec<Token>,
    pub text: String,
    pub logprob: f64,
    pub trace: Vec<StepTrace>,
    /// Position self-attention matrix, when the mode has one.
    pub f: Option<Tensor>,
    /// `type:value` label per input item.
    pub labels: Vec<String>,
}

fn finish(dec: &TapeDecoder, hyp: Hypothesis<TapeState>) -> Decoded {
    let tokens: Vec<Token> = hyp.ids.iter().filter(|&&i| i != EOS).map(|&i| dec.token(i)).collect();
    let trace = hyp
        .states
        .iter()
        .map(|s| StepTrace {
            alpha: s.alpha.map(|a| dec.tape.value(a).data().to_vec()).unwrap_or_default(),
            p_gen: s.p_gen.map(|p| dec.tape.value(p).item()),
        })
        .collect();
    let labels = dec
        .prep
        .items
        .iter()
        .map(|it| format!("{}:{}", it.slot_type.as_deref().unwrap_or(""), it.slot_value.as_deref().unwrap_or("")))
        .collect();
    Decoded {
        text: render(&tokens),
        tokens,
        ids: hyp.ids,
        logprob: hyp.logprob,
        trace,
        f: dec.prep.f.map(|f| dec.tape.value(f).clone()),
        labels,
    }
}

pub fn greedy_decode(model: &Model, kb: &KnowledgeBase, max_len: usize) -> Result<Decoded> {
    let mut dec = TapeDecoder::new(model, kb, Gate::Learned)?;
    let hyp = greedy(&mut dec, max_len)?;
    Ok(finish(&dec, hyp))
}

pub fn beam_decode(model: &Model, kb: &KnowledgeBase, beam: usize, max_len: usize) -> Result<Decoded> {
    let mut dec = TapeDecoder::new(model, kb, Gate::Learned)?;
    let hyp = beam_search(&mut dec, beam, max_len)?;
    Ok(finish(&dec, hyp))
}

/// Write `<stem>.alpha.csv` (one row per step, one column per input item)
/// and, when present, `<stem>.F.csv` (row-labeled n × n matrix).
pub fn dump_attention(decoded: &Decoded, dir: &Path, stem: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.alpha.csv")))?;
    w.write_record(&decoded.labels)?;
    for step in &decoded.trace {
        w.write_record(step.alpha.iter().map(|a| format!("{a:?}")))?;
    }
    w.flush()?;
    if let Some(f) = &decoded.f {
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.F.csv")))?;
        w.write_record(std::iter::once("").chain(decoded.labels.iter().map(String::as_str)))?;
        for (i, label) in decoded.labels.iter().enumerate() {
            w.write_record(std::iter::once(label.clone()).chain(f.row(i).iter().map(|x| format!("{x:?}"))))?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Read a CSV written by [`dump_attention`]: header labels and the numeric
/// body, skipping the label column when `row_labels` is set.
pub fn read_attention_csv(path: &Path, row_labels: bool) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if row_labels {
        header.remove(0);
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let skip = usize::from(row_labels);
        let row = rec
            .iter()
            .skip(skip)
            .map(|x| x.parse::<f64>().map_err(|e| KbError::Corpus(format!("bad number {x:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// One line of a generation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub entity_id: String,
    pub output: String,
    pub logprob: f64,
}

pub fn write_generations(path: &Path, gens: &[Generation]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for g in gens {
        serde_json::to_writer(&mut out, g)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_generations(path: &Path) -> Result<Vec<Generation>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| KbError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
