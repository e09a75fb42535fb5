//! Slot-aware attention with coverage, and table position self-attention.
//!
//! Slot attention scores triple `i` at decoder step `t` as
//! `e_i = v · tanh(h W_h + s_i W_s + v_i W_v + c_i W_c + b_e)` and
//! normalizes with a softmax. Position self-attention builds a static
//! row-stochastic matrix `F` from the row embeddings alone:
//! `F = softmax_rows(tanh(R W_in) W_g tanh(R W_out)^T)`.

use numkit::{ParamId, ParamSet, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{KbError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SlotAttention {
    pub w_h: ParamId,
    pub w_s: ParamId,
    pub w_v: ParamId,
    pub w_c: ParamId,
    pub b_e: ParamId,
    pub v: ParamId,
}

impl SlotAttention {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        dims: (usize, usize, usize, usize),
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (hidden, type_dim, value_dim, attn) = dims;
        let mut w = |name: &str, shape: &[usize], init: bool| -> Result<ParamId> {
            let t = if init { Tensor::uniform(shape, scale, rng) } else { Tensor::zeros(shape) };
            Ok(params.insert(format!("att.{name}"), t)?)
        };
        Ok(Self {
            w_h: w("W_h", &[hidden, attn], true)?,
            w_s: w("W_s", &[type_dim, attn], true)?,
            w_v: w("W_v", &[value_dim, attn], true)?,
            w_c: w("W_c", &[1, attn], true)?,
            b_e: w("b_e", &[attn], false)?,
            v: w("v", &[attn], true)?,
        })
    }

    pub fn lookup(params: &ParamSet) -> Result<Self> {
        let id = |n: &str| params.id(&format!("att.{n}"));
        Ok(Self {
            w_h: id("W_h")?,
            w_s: id("W_s")?,
            w_v: id("W_v")?,
            w_c: id("W_c")?,
            b_e: id("b_e")?,
            v: id("v")?,
        })
    }
}

/// The step-independent part of every triple's score:
/// `S W_s + V W_v + b_e`, one row per triple.
pub fn slot_keys(tape: &mut Tape, att: &SlotAttention, s: Var, v: Var) -> Result<Var> {
    let (w_s, w_v, b_e) = (tape.param(att.w_s), tape.param(att.w_v), tape.param(att.b_e));
    let ks = tape.matmul(s, w_s)?;
    let kv = tape.matmul(v, w_v)?;
    let k = tape.add(ks, kv)?;
    Ok(tape.add(k, b_e)?)
}

/// Attention distribution `α` and raw scores `e` for decoder state `h`,
/// given the precomputed [`slot_keys`] and the coverage vector.
pub fn slot_attention(tape: &mut Tape, att: &SlotAttention, h: Var, keys: Var, coverage: Var) -> Result<(Var, Var)> {
    let n = tape.shape(keys)[0];
    if n == 0 {
        return Err(KbError::InvalidKb("attention over zero triples".into()));
    }
    let (w_h, w_c, v) = (tape.param(att.w_h), tape.param(att.w_c), tape.param(att.v));
    let q = tape.matmul(h, w_h)?;
    let c_col = tape.reshape(coverage, &[n, 1])?;
    let cov = tape.matmul(c_col, w_c)?;
    let pre = tape.add(keys, cov)?;
    let pre = tape.add(pre, q)?;
    let act = tape.tanh(pre);
    let e = tape.matmul(act, v)?;
    let alpha = tape.softmax(e)?;
    Ok((alpha, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionAttention {
    pub w_in: ParamId,
    pub w_out: ParamId,
    pub w_g: ParamId,
}

impl PositionAttention {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        pos_dim: usize,
        attn: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = |name: &str, shape: &[usize]| params.insert(format!("pos.{name}"), Tensor::uniform(shape, scale, rng));
        Ok(Self {
            w_in: w("W_in", &[2 * pos_dim, attn])?,
            w_out: w("W_out", &[2 * pos_dim, attn])?,
            w_g: w("W_g", &[attn, attn])?,
        })
    }

    pub fn lookup(params: &ParamSet) -> Result<Self> {
        let id = |n: &str| params.id(&format!("pos.{n}"));
        Ok(Self {
            w_in: id("W_in")?,
            w_out: id("W_out")?,
            w_g: id("W_g")?,
        })
    }
}

/// `F` (n × n) from row-position embeddings `rows` (n × 2·pos_dim). Row `i`
/// is a distribution over context triples `j`.
pub fn position_self_attention(tape: &mut Tape, pos: &PositionAttention, rows: Var) -> Result<Var> {
    let (w_in, w_out, w_g) = (tape.param(pos.w_in), tape.param(pos.w_out), tape.param(pos.w_g));
    let gi = tape.matmul(rows, w_in)?;
    let g_in = tape.tanh(gi);
    let go = tape.matmul(rows, w_out)?;
    let g_out = tape.tanh(go);
    let left = tape.matmul(g_in, w_g)?;
    let g_out_t = tape.transpose(g_out)?;
    let scores = tape.matmul(left, g_out_t)?;
    Ok(tape.softmax(scores)?)
}

/// Position-aware embeddings `S* = F S` and `V* = F V`.
pub fn position_contexts(tape: &mut Tape, f: Var, s: Var, v: Var) -> Result<(Var, Var)> {
    Ok((tape.matmul(f, s)?, tape.matmul(f, v)?))
}

/// Context vectors `L*_s = α S` and `L*_v = α V` (pass `S*`, `V*` for the
/// position-aware variant).
pub fn context_vectors(tape: &mut Tape, alpha: Var, s: Var, v: Var) -> Result<(Var, Var)> {
    Ok((tape.matmul(alpha, s)?, tape.matmul(alpha, v)?))
}
