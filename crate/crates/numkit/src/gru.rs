//! Gated recurrent unit cell.
//!
//! ```text
//! z  = sigmoid(x W_z + h U_z + b_z)        update gate
//! r  = sigmoid(x W_r + h U_r + b_r)        reset gate
//! n  = tanh(x W_n + (r * h) U_n + b_n)     candidate
//! h' = (1 - z) * h + z * n
//! ```

use rand::Rng;

use crate::error::{NumError, Result};
use crate::params::{ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_n: ParamId,
    pub u_n: ParamId,
    pub b_n: ParamId,
}

impl Gru {
    /// Register a cell's nine arrays as `{prefix}.W_z`, `{prefix}.U_z`, ...
    /// Weights are uniform in `[-scale, scale]`, biases start at zero.
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w = |params: &mut ParamSet, name: &str, rows: usize, rng: &mut R| {
            params.insert(
                format!("{prefix}.{name}"),
                Tensor::uniform(&[rows, hidden_dim], scale, rng),
            )
        };
        let w_z = w(params, "W_z", input_dim, rng)?;
        let u_z = w(params, "U_z", hidden_dim, rng)?;
        let w_r = w(params, "W_r", input_dim, rng)?;
        let u_r = w(params, "U_r", hidden_dim, rng)?;
        let w_n = w(params, "W_n", input_dim, rng)?;
        let u_n = w(params, "U_n", hidden_dim, rng)?;
        let b_z = params.insert(format!("{prefix}.b_z"), Tensor::zeros(&[hidden_dim]))?;
        let b_r = params.insert(format!("{prefix}.b_r"), Tensor::zeros(&[hidden_dim]))?;
        let b_n = params.insert(format!("{prefix}.b_n"), Tensor::zeros(&[hidden_dim]))?;
        Ok(Self {
            input_dim,
            hidden_dim,
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_n,
            u_n,
            b_n,
        })
    }

    /// Look up an already-registered cell by prefix.
    pub fn lookup(params: &ParamSet, prefix: &str) -> Result<Self> {
        let id = |n: &str| params.id(&format!("{prefix}.{n}"));
        let w_z = id("W_z")?;
        let u_z = id("U_z")?;
        let shape = params.get(w_z).shape();
        if shape.len() != 2 {
            return Err(NumError::Invalid(format!("{prefix}.W_z must be a matrix")));
        }
        let (input_dim, hidden_dim) = (shape[0], shape[1]);
        if params.get(u_z).shape() != [hidden_dim, hidden_dim] {
            return Err(NumError::Shape {
                op: "Gru::lookup",
                left: params.get(u_z).shape().to_vec(),
                right: vec![hidden_dim, hidden_dim],
            });
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            w_z,
            u_z,
            b_z: id("b_z")?,
            w_r: id("W_r")?,
            u_r: id("U_r")?,
            b_r: id("b_r")?,
            w_n: id("W_n")?,
            u_n: id("U_n")?,
            b_n: id("b_n")?,
        })
    }

    fn gate(&self, tape: &mut Tape, x: Var, h: Var, w: ParamId, u: ParamId, b: ParamId) -> Result<Var> {
        let (w, u, b) = (tape.param(w), tape.param(u), tape.param(b));
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    }

    /// Record one cell step on the tape.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let (xs, hs) = (tape.shape(x).to_vec(), tape.shape(h).to_vec());
        if xs != [self.input_dim] || hs != [self.hidden_dim] {
            return Err(NumError::Shape {
                op: "gru_cell",
                left: xs,
                right: hs,
            });
        }
        let za = self.gate(tape, x, h, self.w_z, self.u_z, self.b_z)?;
        let z = tape.sigmoid(za);
        let ra = self.gate(tape, x, h, self.w_r, self.u_r, self.b_r)?;
        let r = tape.sigmoid(ra);
        let rh = tape.mul(r, h)?;
        let na = self.gate(tape, x, rh, self.w_n, self.u_n, self.b_n)?;
        let n = tape.tanh(na);
        // h + z * (n - h)
        let diff = tape.sub(n, h)?;
        let moved = tape.mul(z, diff)?;
        tape.add(h, moved)
    }
}

/// Evaluate a single cell step outside of any training tape.
pub fn gru_cell(params: &ParamSet, cell: &Gru, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new(params);
    let xv = tape.constant(Tensor::vector(x.to_vec())?);
    let hv = tape.constant(Tensor::vector(h_prev.to_vec())?);
    let out = cell.step(&mut tape, xv, hv)?;
    Ok(tape.value(out).data().to_vec())
}
