//! Central finite-difference verification of tape gradients.

use crate::error::{NumError, Result};
use crate::params::{ParamId, ParamSet};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Check at most this many evenly strided elements per array.
    pub max_elems: Option<usize>,
    /// Multiple `k` of the central-difference roundoff level
    /// `ε_mach · max(|f(θ+eps)|, |f(θ−eps)|) / eps`. An element whose
    /// absolute disagreement is below `k` times that level is counted as
    /// agreeing, whatever its relative error. Zero disables the floor.
    pub roundoff_factor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            max_elems: None,
            roundoff_factor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Largest relative error among elements above the roundoff floor.
    pub max_rel_error: f64,
    /// Largest relative error over all checked elements.
    pub max_rel_error_strict: f64,
    /// Elements that failed the relative test but sat within the floor.
    pub below_floor: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn max_rel_error_strict(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error_strict).fold(0.0, f64::max)
    }

    pub fn below_floor(&self) -> usize {
        self.params.iter().map(|p| p.below_floor).sum()
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.max_rel_error >= self.tol)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(params: &ParamSet, build: &F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let loss = build(&mut tape)?;
    let t = tape.value(loss);
    if t.len() != 1 {
        return Err(NumError::NonScalarLoss(t.shape().to_vec()));
    }
    Ok(t.item())
}

/// Compare the tape gradient of the loss built by `build` against central
/// differences `(f(θ+eps) - f(θ-eps)) / (2 eps)`, element by element.
///
/// The loss is evaluated twice at the unperturbed point first; any
/// difference between the two evaluations is reported as non-determinism.
pub fn gradient_check<F>(params: &ParamSet, opts: GradCheckOptions, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let (grads, loss) = {
        let mut tape = Tape::new(params);
        let loss = build(&mut tape)?;
        (tape.backward(loss)?, tape.value(loss).item())
    };
    let again = eval(params, &build)?;
    if again.to_bits() != loss.to_bits() {
        return Err(NumError::NonDeterministic {
            first: loss,
            second: again,
        });
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        loss,
        tol: opts.tol,
        params: Vec::with_capacity(params.len()),
    };
    for id in params.ids() {
        report.params.push(check_one(&mut work, id, grads.get(id).data(), opts, &build)?);
    }
    Ok(report)
}

fn check_one<F>(
    work: &mut ParamSet,
    id: ParamId,
    analytic: &[f64],
    opts: GradCheckOptions,
    build: &F,
) -> Result<ParamCheck>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let n = analytic.len();
    let stride = match opts.max_elems {
        Some(k) if k > 0 && n > k => n.div_ceil(k),
        _ => 1,
    };
    let mut out = ParamCheck {
        name: work.name(id).to_string(),
        checked: 0,
        max_rel_error: 0.0,
        max_rel_error_strict: 0.0,
        below_floor: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in (0..n).step_by(stride) {
        let orig = work.get(id).data()[i];
        work.get_mut(id).data_mut()[i] = orig + opts.eps;
        let plus = eval(work, build)?;
        work.get_mut(id).data_mut()[i] = orig - opts.eps;
        let minus = eval(work, build)?;
        work.get_mut(id).data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let mut err = relative_error(analytic[i], numeric);
        out.checked += 1;
        out.max_rel_error_strict = out.max_rel_error_strict.max(err);
        let floor = opts.roundoff_factor * f64::EPSILON * plus.abs().max(minus.abs()) / opts.eps;
        if err >= opts.tol && (analytic[i] - numeric).abs() < floor {
            out.below_floor += 1;
            err = 0.0;
        }
        if err > out.max_rel_error || out.checked == 1 {
            out.max_rel_error = err;
            out.worst_index = i;
            out.analytic = analytic[i];
            out.numeric = numeric;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use std::cell::Cell;

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let mut ps = ParamSet::new();
        let id = ps
            .insert("theta", Tensor::vector(vec![0.3, -1.7, 2.5, 0.01]).unwrap())
            .unwrap();
        let report = gradient_check(&ps, GradCheckOptions::default(), |tape| {
            let p = tape.param(id);
            let sq = tape.mul(p, p)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-8, "{report:?}");
        assert!(report.passed());
    }

    #[test]
    fn nondeterministic_closure_is_rejected() {
        let mut ps = ParamSet::new();
        let id = ps.insert("theta", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let calls = Cell::new(0.0);
        let err = gradient_check(&ps, GradCheckOptions::default(), |tape| {
            calls.set(calls.get() + 1.0);
            let p = tape.param(id);
            let shifted = tape.affine(p, 1.0, calls.get());
            Ok(tape.sum(shifted))
        })
        .unwrap_err();
        assert!(matches!(err, NumError::NonDeterministic { .. }));
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // min() picks a branch; a kink exactly at the evaluation point makes the
        // one-sided tape gradient disagree with the central difference
        let mut ps = ParamSet::new();
        let id = ps.insert("theta", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let report = gradient_check(&ps, GradCheckOptions::default(), |tape| {
            let p = tape.param(id);
            let one = tape.constant(Tensor::vector(vec![1.0])?);
            let m = tape.min(p, one)?;
            Ok(tape.sum(m))
        })
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn roundoff_floor_only_forgives_tiny_disagreements() {
        let mut ps = ParamSet::new();
        let id = ps.insert("theta", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        // f = 1e6 + 1e-9·θ: the true gradient is drowned by roundoff in f
        let build = |tape: &mut Tape| {
            let p = tape.param(id);
            Ok(tape.affine(p, 1e-9, 1e6))
        };
        let strict = gradient_check(&ps, GradCheckOptions::default(), build).unwrap();
        assert!(!strict.passed());
        let opts = GradCheckOptions {
            roundoff_factor: 10.0,
            ..GradCheckOptions::default()
        };
        let floored = gradient_check(&ps, opts, build).unwrap();
        assert!(floored.passed());
        assert_eq!(floored.below_floor(), 1);
        assert_eq!(floored.max_rel_error_strict(), strict.max_rel_error_strict());

        // a genuinely wrong slope is far above the floor
        let wrong = gradient_check(&ps, opts, |tape| {
            let p = tape.param(id);
            let one = tape.constant(Tensor::vector(vec![1.0])?);
            let m = tape.min(p, one)?;
            Ok(tape.sum(m))
        })
        .unwrap();
        assert!(!wrong.passed());
    }
}
