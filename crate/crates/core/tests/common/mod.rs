#![allow(dead_code)]

use kbgen::corpus::{Example, KnowledgeBase, VocabSet};
use kbgen::{Model, ModelMode, RunConfig};
use numkit::{ParamSet, Tensor};

pub fn tiny_config(mode: ModelMode) -> RunConfig {
    RunConfig {
        mode,
        type_dim: 3,
        value_dim: 3,
        pos_dim: 2,
        hidden: 4,
        attn_dim: 3,
        max_rows: 8,
        min_freq: 1,
        init_scale: 0.5,
        seed: 11,
        ..RunConfig::default()
    }
}

/// Three triples over two rows.
pub fn kb3() -> KnowledgeBase {
    KnowledgeBase::new(
        "kb3",
        [("Team", "Hapoel Holon", 1), ("Goals", "29", 1), ("Country", "Israel", 2)],
    )
    .unwrap()
}

/// Six reference tokens: three values and three words.
pub fn example6() -> Example {
    Example::new(kb3(), "Hapoel Holon scored 29 for Israel .").unwrap()
}

pub fn tiny_model(mode: ModelMode) -> Model {
    let ex = example6();
    let vocab = VocabSet::build(&[ex], 1).unwrap();
    Model::new(tiny_config(mode), vocab).unwrap()
}

pub fn param<'a>(params: &'a ParamSet, name: &str) -> &'a Tensor {
    params.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"))
}

/// `x · W` for a row vector and a matrix stored row-major.
pub fn vecmat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (r, c) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), r);
    (0..c).map(|j| (0..r).map(|i| x[i] * w.at(i, j)).sum()).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// One GRU step evaluated component by component from the named arrays.
pub fn gru_oracle(params: &ParamSet, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let p = |n: &str| param(params, &format!("{prefix}.{n}"));
    let d = h.len();
    let mut out = vec![0.0; d];
    for k in 0..d {
        let lin = |w: &Tensor, u: &Tensor, b: &Tensor, hv: &[f64]| {
            let mut s = b.data()[k];
            for (i, xi) in x.iter().enumerate() {
                s += xi * w.at(i, k);
            }
            for (i, hi) in hv.iter().enumerate() {
                s += hi * u.at(i, k);
            }
            s
        };
        let z = sigmoid(lin(p("W_z"), p("U_z"), p("b_z"), h));
        let r: Vec<f64> = (0..d)
            .map(|j| {
                let mut s = p("b_r").data()[j];
                for (i, xi) in x.iter().enumerate() {
                    s += xi * p("W_r").at(i, j);
                }
                for (i, hi) in h.iter().enumerate() {
                    s += hi * p("U_r").at(i, j);
                }
                sigmoid(s)
            })
            .collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let n = lin(p("W_n"), p("U_n"), p("b_n"), &rh).tanh();
        out[k] = (1.0 - z) * h[k] + z * n;
    }
    out
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

/// Central-difference check of the teacher-forced sequence loss of
/// [`example6`] under `model`. Disagreements under ten times the
/// difference quotient's roundoff level are not counted.
pub fn check_sequence_loss(model: &Model) -> numkit::GradCheckReport {
    let ex = example6();
    let opts = numkit::GradCheckOptions {
        roundoff_factor: 10.0,
        ..numkit::GradCheckOptions::default()
    };
    numkit::gradient_check(&model.params, opts, |tape| {
        kbgen::generator::sequence_loss(tape, model, &ex)
            .map(|lb| lb.loss)
            .map_err(|e| numkit::NumError::Invalid(e.to_string()))
    })
    .unwrap()
}
