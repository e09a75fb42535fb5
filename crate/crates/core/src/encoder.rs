//! Triple embedding and the bidirectional GRU encoder.

use numkit::{Gru, ParamId, Tape, Tensor, Var};

use crate::corpus::{linearize, InputItem, KnowledgeBase, Linearization, VocabSet};
use crate::error::{KbError, Result};

/// Slot-type, slot-value and forward/backward row tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub types: ParamId,
    pub values: ParamId,
    pub row_fwd: ParamId,
    pub row_bwd: ParamId,
}

/// Per-item embeddings. Absent fields are zero rows.
#[derive(Debug, Clone, Copy)]
pub struct Embedded {
    /// n × type_dim
    pub s: Var,
    /// n × value_dim
    pub v: Var,
    /// n × 2·pos_dim, forward then backward row embedding
    pub rows: Var,
    /// n × slot_dim, `[s, v, r, r̂]`
    pub l: Var,
}

/// Rows of `table` for each id; `None` gives a zero row.
fn lookup_masked(tape: &mut Tape, table: ParamId, ids: &[Option<usize>]) -> Result<Var> {
    let table = tape.param(table);
    let dim = tape.shape(table)[1];
    let n = ids.len();
    if ids.iter().all(Option::is_none) {
        return Ok(tape.zeros(&[n, dim]));
    }
    let gathered = tape.gather(table, &ids.iter().map(|i| i.unwrap_or(0)).collect::<Vec<_>>())?;
    if ids.iter().all(Option::is_some) {
        return Ok(gathered);
    }
    let mask: Vec<f64> = ids
        .iter()
        .flat_map(|i| std::iter::repeat_n(if i.is_some() { 1.0 } else { 0.0 }, dim))
        .collect();
    let mask = tape.constant(Tensor::matrix(n, dim, mask)?);
    Ok(tape.mul(gathered, mask)?)
}

pub fn embed_items(tape: &mut Tape, tables: &EmbeddingTables, vocab: &VocabSet, items: &[InputItem]) -> Result<Embedded> {
    if items.is_empty() {
        return Err(KbError::InvalidKb("cannot embed an empty input".into()));
    }
    let max_rows = tape.params().get(tables.row_fwd).rows();
    for it in items {
        if it.row > max_rows || it.row_back > max_rows {
            return Err(KbError::Config(format!(
                "row {} exceeds the {max_rows} rows of the position tables",
                it.row.max(it.row_back)
            )));
        }
    }
    let type_ids: Vec<_> = items.iter().map(|it| it.slot_type.as_deref().map(|t| vocab.type_id(t))).collect();
    let value_ids: Vec<_> = items.iter().map(|it| it.slot_value.as_deref().map(|v| vocab.value_id(v))).collect();
    let fwd: Vec<_> = items.iter().map(|it| it.row.checked_sub(1)).collect();
    let bwd: Vec<_> = items.iter().map(|it| it.row_back.checked_sub(1)).collect();
    let s = lookup_masked(tape, tables.types, &type_ids)?;
    let v = lookup_masked(tape, tables.values, &value_ids)?;
    let rf = lookup_masked(tape, tables.row_fwd, &fwd)?;
    let rb = lookup_masked(tape, tables.row_bwd, &bwd)?;
    let rows = tape.concat_cols(&[rf, rb])?;
    let l = tape.concat_cols(&[s, v, rf, rb])?;
    Ok(Embedded { s, v, rows, l })
}

/// Embed every triple of `kb` with its type, value and both row positions.
pub fn embed_triples(tape: &mut Tape, tables: &EmbeddingTables, vocab: &VocabSet, kb: &KnowledgeBase) -> Result<Embedded> {
    embed_items(tape, tables, vocab, &linearize(kb, Linearization::TypedPositions))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub fwd: Gru,
    pub bwd: Gru,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `h_i = [forward_i; backward_i]` for every input item.
    pub states: Vec<Var>,
    /// Final forward state joined with the final backward state (the
    /// backward pass ends at item 0).
    pub h_n: Var,
}

pub fn encode(tape: &mut Tape, enc: &Encoder, l: Var) -> Result<EncoderOutput> {
    let n = match tape.shape(l) {
        [n, _] => *n,
        _ => return Err(KbError::InvalidKb("encoder input must be a matrix".into())),
    };
    if n == 0 {
        return Err(KbError::InvalidKb("cannot encode an empty input".into()));
    }
    let xs: Vec<Var> = (0..n).map(|i| tape.row(l, i)).collect::<std::result::Result<_, _>>()?;
    let mut fwd = Vec::with_capacity(n);
    let mut h = tape.zeros(&[enc.fwd.hidden_dim]);
    for &x in &xs {
        h = enc.fwd.step(tape, x, h)?;
        fwd.push(h);
    }
    let mut bwd = vec![h; n];
    let mut h = tape.zeros(&[enc.bwd.hidden_dim]);
    for i in (0..n).rev() {
        h = enc.bwd.step(tape, xs[i], h)?;
        bwd[i] = h;
    }
    let states = (0..n)
        .map(|i| tape.concat(&[fwd[i], bwd[i]]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let h_n = tape.concat(&[fwd[n - 1], bwd[0]])?;
    Ok(EncoderOutput { states, h_n })
}
