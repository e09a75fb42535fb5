//! Decoder GRU, vocabulary and copy distributions, the training loss and the
//! training loop.
//!
//! At step `t` the decoder reads the previous token's embedding (plus the
//! previous context vectors when `input_feeding` is on), attends over the
//! input items, and mixes the vocabulary softmax with the copy distribution:
//!
//! ```text
//! P(y) = p_gen · P_vocab(y) + (1 - p_gen) · P_source(y)
//! ```
//!
//! where `P_source` sums attention over items sharing a value. The loss adds
//! `λ Σ_i min(α_i, c_i)` per step, `c` being the running sum of earlier
//! attention distributions.

use numkit::{adam_step, AdamState, Gradients, Tape, Tensor, Var};
use rand::seq::SliceRandom;

use crate::attention::{context_vectors, position_contexts, position_self_attention, slot_attention, slot_keys};
use crate::corpus::{linearize, normalize_value, Example, InputItem, KnowledgeBase, Token, BOS, EOS, UNK};
use crate::encoder::{embed_items, encode, Embedded, EncoderOutput};
use crate::error::{KbError, Result};
use crate::model::Model;

/// How the copy gate is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Learned,
    /// Clamp `p_gen` to a constant (1 gives pure generation, 0 pure copy).
    Fixed(f64),
}

/// Placement of a KB's unique values in the extended output vocabulary:
/// ids below the word-vocabulary size are ordinary entries; values missing
/// from the vocabulary get ids after it.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMap {
    /// Unique values, KB surface form.
    pub values: Vec<String>,
    /// For each input item, the index of its value in `values`.
    pub item_groups: Vec<usize>,
    /// Extended id of each unique value.
    pub ext_ids: Vec<usize>,
    pub vocab_len: usize,
    pub ext_len: usize,
}

impl SourceMap {
    pub fn new(model: &Model, kb: &KnowledgeBase, items: &[InputItem]) -> Self {
        let values: Vec<String> = kb.unique_values().into_iter().map(str::to_string).collect();
        let groups = kb.value_groups();
        let vocab_len = model.vocab.words.len();
        let mut next = vocab_len;
        let ext_ids = values
            .iter()
            .map(|v| {
                model.vocab.word_id(&Token::Value(v.clone())).unwrap_or_else(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Self {
            values,
            item_groups: items.iter().map(|it| groups[it.triple]).collect(),
            ext_ids,
            vocab_len,
            ext_len: next,
        }
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        let key = normalize_value(value);
        self.values.iter().position(|v| normalize_value(v) == key)
    }

    /// Token for an extended id. Value entries use the KB's surface form
    /// when the KB holds that value.
    pub fn token(&self, model: &Model, ext_id: usize) -> Token {
        if ext_id >= self.vocab_len {
            let j = self.ext_ids.iter().position(|&e| e == ext_id).expect("extended id belongs to a value");
            return Token::Value(self.values[j].clone());
        }
        match Token::from_key(model.vocab.words.token(ext_id)) {
            Token::Value(v) => match self.value_index(&v) {
                Some(j) => Token::Value(self.values[j].clone()),
                None => Token::Value(v),
            },
            word => word,
        }
    }
}

/// Everything computed once per example before decoding.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub items: Vec<InputItem>,
    pub embedded: Embedded,
    pub encoded: EncoderOutput,
    /// Step-independent attention terms.
    pub keys: Var,
    /// Position self-attention, in the position-aware mode only.
    pub f: Option<Var>,
    /// Embeddings the context vectors are read from (`S`/`V` or `S*`/`V*`).
    pub s_ctx: Var,
    pub v_ctx: Var,
    pub source: SourceMap,
}

pub fn prepare(tape: &mut Tape, model: &Model, kb: &KnowledgeBase) -> Result<Prepared> {
    let parts = model.parts();
    let items = linearize(kb, model.config.mode.linearization());
    let embedded = embed_items(tape, &parts.tables, &model.vocab, &items)?;
    let encoded = encode(tape, &parts.encoder, embedded.l)?;
    let keys = slot_keys(tape, &parts.slot, embedded.s, embedded.v)?;
    let (f, s_ctx, v_ctx) = if model.config.mode.uses_positions() {
        let f = position_self_attention(tape, &parts.position, embedded.rows)?;
        let (s, v) = position_contexts(tape, f, embedded.s, embedded.v)?;
        (Some(f), s, v)
    } else {
        (None, embedded.s, embedded.v)
    };
    let source = SourceMap::new(model, kb, &items);
    Ok(Prepared {
        items,
        embedded,
        encoded,
        keys,
        f,
        s_ctx,
        v_ctx,
        source,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub coverage: Var,
    /// Embedding of the previous output token.
    pub y_prev: Var,
    /// `[L*_s; L*_v]` from the previous step.
    pub feed: Var,
    pub step: usize,
}

pub fn initial_state(tape: &mut Tape, model: &Model, prep: &Prepared) -> Result<DecoderState> {
    let c = &model.config;
    let y_prev = embed_target(tape, model, &Token::Word(model.vocab.words.token(BOS).to_string()))?;
    Ok(DecoderState {
        h: prep.encoded.h_n,
        coverage: tape.zeros(&[prep.items.len()]),
        y_prev,
        feed: tape.zeros(&[c.type_dim + c.value_dim]),
        step: 0,
    })
}

/// Decoder-side embedding of an output token: values come from the value
/// table, words from the word table.
pub fn embed_target(tape: &mut Tape, model: &Model, token: &Token) -> Result<Var> {
    let parts = model.parts();
    let (table, id) = match token {
        Token::Value(v) => (parts.tables.values, model.vocab.value_id(v)),
        Token::Word(w) => (parts.words, model.vocab.words.id(w)),
    };
    let table = tape.param(table);
    Ok(tape.row(table, id)?)
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub alpha: Var,
    pub scores: Var,
    pub l_s: Var,
    pub l_v: Var,
    pub p_vocab: Var,
    /// Copy distribution over unique values (copying modes only).
    pub p_source: Option<Var>,
    pub p_gen: Option<Var>,
    /// State after this step; `y_prev` still refers to the consumed input.
    pub state: DecoderState,
}

pub fn source_distribution(tape: &mut Tape, alpha: Var, source: &SourceMap) -> Result<Var> {
    Ok(tape.scatter_add(alpha, &source.item_groups, source.values.len())?)
}

pub fn decode_step(tape: &mut Tape, model: &Model, prep: &Prepared, state: &DecoderState, gate: Gate) -> Result<StepOutput> {
    let parts = model.parts();
    let x = if model.config.input_feeding {
        tape.concat(&[state.y_prev, state.feed])?
    } else {
        state.y_prev
    };
    let h = parts.decoder.step(tape, x, state.h)?;
    let (alpha, scores) = slot_attention(tape, &parts.slot, h, prep.keys, state.coverage)?;
    let (l_s, l_v) = context_vectors(tape, alpha, prep.s_ctx, prep.v_ctx)?;

    let out = &parts.output;
    let joined = tape.concat(&[h, l_s, l_v])?;
    let v = tape.param(out.v);
    let b = tape.param(out.b_vocab);
    let logits = tape.matmul(joined, v)?;
    let logits = tape.add(logits, b)?;
    let p_vocab = tape.softmax(logits)?;

    let (p_source, p_gen) = if model.config.mode.copies() {
        let ps = source_distribution(tape, alpha, &prep.source)?;
        let pg = match gate {
            Gate::Fixed(p) => tape.constant(Tensor::vector(vec![p])?),
            Gate::Learned => {
                let mut acc = tape.param(out.b_gen);
                for (input, w) in [(l_s, out.gen_s), (l_v, out.gen_v), (h, out.gen_h), (state.y_prev, out.gen_y)] {
                    let w = tape.param(w);
                    let term = tape.matmul(input, w)?;
                    acc = tape.add(acc, term)?;
                }
                tape.sigmoid(acc)
            }
        };
        (Some(ps), Some(pg))
    } else {
        (None, None)
    };

    let coverage = tape.add(state.coverage, alpha)?;
    let feed = tape.concat(&[l_s, l_v])?;
    Ok(StepOutput {
        alpha,
        scores,
        l_s,
        l_v,
        p_vocab,
        p_source,
        p_gen,
        state: DecoderState {
            h,
            coverage,
            y_prev: state.y_prev,
            feed,
            step: state.step + 1,
        },
    })
}

/// Record `token` as the input for the next step.
pub fn feed_token(tape: &mut Tape, model: &Model, state: &DecoderState, token: &Token) -> Result<DecoderState> {
    Ok(DecoderState {
        y_prev: embed_target(tape, model, token)?,
        ..*state
    })
}

/// `P_final` over the extended vocabulary.
pub fn final_distribution(tape: &Tape, prep: &Prepared, out: &StepOutput) -> Vec<f64> {
    let src = &prep.source;
    let pv = tape.value(out.p_vocab).data();
    let mut dist = vec![0.0; src.ext_len];
    match (out.p_source, out.p_gen) {
        (Some(ps), Some(pg)) => {
            let g = tape.value(pg).item();
            for (d, p) in dist.iter_mut().zip(pv) {
                *d = g * p;
            }
            for (j, p) in tape.value(ps).data().iter().enumerate() {
                dist[src.ext_ids[j]] += (1.0 - g) * p;
            }
        }
        _ => dist[..pv.len()].copy_from_slice(pv),
    }
    dist
}

/// Extended id a reference token is scored against, and the unique-value
/// index it can be copied from. Returns `None` ids for UNK fallbacks.
fn target_ids(model: &Model, prep: &Prepared, token: &Token) -> (Option<usize>, Option<usize>) {
    let word = model.vocab.word_id(token);
    let copy = match token {
        Token::Value(v) if model.config.mode.copies() => prep.source.value_index(v),
        _ => None,
    };
    (word, copy)
}

/// Probability of `token` under the step output, as a tape scalar. The flag
/// is set when the token had to be scored as UNK.
fn target_prob(tape: &mut Tape, model: &Model, prep: &Prepared, out: &StepOutput, token: &Token) -> Result<(Var, bool)> {
    let (word, copy) = target_ids(model, prep, token);
    let unk = word.is_none() && copy.is_none();
    let wid = if unk { Some(UNK) } else { word };
    let Some(pg) = out.p_gen else {
        return Ok((tape.slice(out.p_vocab, wid.unwrap_or(UNK), 1)?, unk));
    };
    let mut total: Option<Var> = None;
    if let Some(w) = wid {
        let pv = tape.slice(out.p_vocab, w, 1)?;
        total = Some(tape.mul(pg, pv)?);
    }
    if let (Some(j), Some(ps)) = (copy, out.p_source) {
        let p = tape.slice(ps, j, 1)?;
        let one_minus = tape.affine(pg, -1.0, 1.0);
        let term = tape.mul(one_minus, p)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok((total.expect("at least one term"), unk))
}

/// `λ Σ_i min(α_i, c_i)` for one step, as a length-1 tape value.
pub fn coverage_penalty(tape: &mut Tape, alpha: Var, coverage: Var, lambda: f64) -> Result<Var> {
    let m = tape.min(alpha, coverage)?;
    let s = tape.sum(m);
    Ok(tape.affine(s, lambda, 0.0))
}

#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    /// Summed over steps: negative log-likelihood plus coverage penalty.
    pub loss: Var,
    pub nll: f64,
    pub coverage: f64,
    /// Decoder steps, i.e. reference length plus EOS.
    pub steps: usize,
    /// Reference tokens scored as UNK.
    pub unk_targets: usize,
}

/// Teacher-forced loss of one example, summed over steps.
pub fn sequence_loss(tape: &mut Tape, model: &Model, example: &Example) -> Result<LossBreakdown> {
    let prep = prepare(tape, model, &example.kb)?;
    let mut state = initial_state(tape, model, &prep)?;
    let eos = Token::Word(model.vocab.words.token(EOS).to_string());
    let targets: Vec<&Token> = example.reference.iter().chain(std::iter::once(&eos)).collect();
    let lambda = model.config.lambda;
    let mut terms = Vec::with_capacity(targets.len());
    let (mut nll, mut cov, mut unk_targets) = (0.0, 0.0, 0);
    for (t, target) in targets.iter().enumerate() {
        let out = decode_step(tape, model, &prep, &state, Gate::Learned)?;
        let (p, unk) = target_prob(tape, model, &prep, &out, target)?;
        unk_targets += usize::from(unk);
        let logp = tape.log(p);
        nll -= tape.value(logp).item();
        let mut term = tape.affine(logp, -1.0, 0.0);
        if lambda > 0.0 {
            let pen = coverage_penalty(tape, out.alpha, state.coverage, lambda)?;
            cov += tape.value(pen).item();
            term = tape.add(term, pen)?;
        }
        terms.push(term);
        if t + 1 < targets.len() {
            state = feed_token(tape, model, &out.state, target)?;
        }
    }
    let all = tape.concat(&terms)?;
    let loss = tape.sum(all);
    Ok(LossBreakdown {
        loss,
        nll,
        coverage: cov,
        steps: targets.len(),
        unk_targets,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Per-token loss including the coverage penalty.
    pub train_loss: f64,
    /// Per-token negative log-likelihood.
    pub train_nll: f64,
    /// Per-token negative log-likelihood on the dev split.
    pub dev_nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    /// Reference tokens scored as UNK in the final epoch.
    pub unk_targets: usize,
}

/// Per-token (total loss, NLL) over `examples` without updating anything.
pub fn evaluate_loss(model: &Model, examples: &[Example]) -> Result<(f64, f64)> {
    let (mut total, mut nll, mut steps) = (0.0, 0.0, 0usize);
    for ex in examples {
        let mut tape = Tape::new(&model.params);
        let lb = sequence_loss(&mut tape, model, ex)?;
        total += tape.value(lb.loss).item();
        nll += lb.nll;
        steps += lb.steps;
    }
    let steps = steps.max(1) as f64;
    Ok((total / steps, nll / steps))
}

/// Mini-batch Adam training with gradient clipping. Each example's loss is
/// divided by its step count and batch gradients are averaged. The
/// parameters of the epoch with the lowest dev NLL (train NLL when `dev` is
/// empty) are kept.
pub fn train(model: &mut Model, train: &[Example], dev: &[Example], mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(KbError::Corpus("training split is empty".into()));
    }
    let cfg = model.config.clone();
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut rng = numkit::rng::split(cfg.seed, 1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, numkit::ParamSet)> = None;
    let mut epochs = Vec::new();
    let mut unk_targets = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut nll, mut steps) = (0.0, 0.0, 0usize);
        unk_targets = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&model.params);
            for &i in batch {
                let mut tape = Tape::new(&model.params);
                let lb = sequence_loss(&mut tape, model, &train[i])?;
                let value = tape.value(lb.loss).item();
                if !value.is_finite() {
                    return Err(KbError::Divergence {
                        epoch,
                        batch: b + 1,
                        detail: format!("loss {value} on entity {}", train[i].kb.entity_id()),
                    });
                }
                total += value;
                nll += lb.nll;
                steps += lb.steps;
                unk_targets += lb.unk_targets;
                let norm = tape.affine(lb.loss, 1.0 / lb.steps as f64, 0.0);
                grads.add_assign(&tape.backward(norm)?)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(KbError::Divergence {
                    epoch,
                    batch: b + 1,
                    detail: "non-finite gradient".into(),
                });
            }
            grads.clip_global_norm(cfg.clip);
            adam_step(&mut model.params, &grads, &mut adam)?;
        }
        let steps_f = steps as f64;
        let dev_nll = if dev.is_empty() { None } else { Some(evaluate_loss(model, dev)?.1) };
        let log = EpochLog {
            epoch,
            train_loss: total / steps_f,
            train_nll: nll / steps_f,
            dev_nll,
        };
        on_epoch(&log);
        let score = dev_nll.unwrap_or(log.train_nll);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, model.params.clone()));
        }
        let done = cfg.target_loss > 0.0 && log.train_nll < cfg.target_loss;
        epochs.push(log);
        if done {
            break;
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => 0,
    };
    Ok(TrainReport {
        epochs,
        best_epoch,
        unk_targets,
    })
}
