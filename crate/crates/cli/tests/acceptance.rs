//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use kbgen::attention::position_self_attention;
use kbgen::corpus::{split, synth_corpus, Example, KnowledgeBase, Schema, Token, VocabSet};
use kbgen::generator::{decode_step, feed_token, final_distribution, initial_state, prepare, sequence_loss, train, Gate};
use kbgen::inference::{beam_decode, beam_search, greedy, greedy_decode, Generation, StepModel};
use kbgen::metrics::{bleu, evaluate, reconstruct, rouge_l, score_reconstruction, Counts};
use kbgen::{Model, ModelMode, RunConfig};
use numkit::{GradCheckOptions, NumError, Tape};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn sum(xs: &[f64]) -> f64 {
    xs.iter().sum()
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

// ---------------------------------------------------------------- 1

fn figure_kb() -> KnowledgeBase {
    KnowledgeBase::new(
        "silvi_jan",
        [
            ("Name", "Silvi Jan", 1),
            ("Member of sports team", "ASA Tel Aviv University", 2),
            ("Member of sports team", "Israel women's national football team", 3),
            ("Matches", "22", 3),
            ("Goals", "29", 3),
            ("Date of birth", "27 October 1973", 4),
            ("Place of birth", "Holon", 5),
            ("Country of citizenship", "Israel", 6),
            ("Position", "Forward", 7),
            ("Member of sports team", "Hapoel Tel Aviv", 8),
            ("Award received", "Israeli Footballer of the Year", 9),
        ],
    )
    .unwrap()
}

const FIGURE_OUTPUT: &str = "Silvi Jan was born on 27 October 1973 in Holon . She played for ASA Tel Aviv University . \
She also played for Israel women's national football team . She is a citizen of Israel . Silvi Jan is a great player .";

fn metric_oracle() -> Outcome {
    let counts = |p, c, g| Counts { predicted: p, correct: c, gold: g };
    let from_counts = score_reconstruction(counts(7, 6, 11), counts(7, 5, 9)).unwrap();
    let kb = figure_kb();
    let rec = reconstruct(FIGURE_OUTPUT, &kb);
    let from_text = score_reconstruction(rec.overall_counts(&kb), rec.row_counts(&kb)).unwrap();
    let want = [85.7, 54.5, 66.7, 71.4, 55.6, 62.5];
    let mut ok = true;
    let mut got = Vec::new();
    for r in [&from_counts, &from_text] {
        let vals = [
            r.overall.precision,
            r.overall.recall,
            r.overall.f1,
            r.interdependent.precision,
            r.interdependent.recall,
            r.interdependent.f1,
        ]
        .map(pct);
        ok &= vals.iter().zip(&want).all(|(g, w)| (g - w).abs() < 0.05);
        got = vals.to_vec();
    }
    let shown: Vec<String> = got.iter().map(|v| format!("{v:.2}")).collect();
    outcome(
        ok,
        format!(
            "overall P/R/F1 {} / inter-dependent P/R/F1 {} (text fixture reconstructs 7/6/11 and 7/5/9)",
            shown[..3].join("/"),
            shown[3..].join("/")
        ),
    )
}

// ---------------------------------------------------------------- shared tiny setup

const MODES: [ModelMode; 4] = [
    ModelMode::Seq2Seq,
    ModelMode::Pointer,
    ModelMode::PointerType,
    ModelMode::PointerTypePosition,
];

fn tiny_config(mode: ModelMode) -> RunConfig {
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
        input_feeding: mode.uses_positions(),
        seed: 11,
        ..RunConfig::default()
    }
}

fn example6() -> Example {
    let kb = KnowledgeBase::new(
        "kb3",
        [("Team", "Hapoel Holon", 1), ("Goals", "29", 1), ("Country", "Israel", 2)],
    )
    .unwrap();
    Example::new(kb, "Hapoel Holon scored 29 for Israel .").unwrap()
}

// ---------------------------------------------------------------- 2

fn gradient_suite() -> Outcome {
    let ex = example6();
    assert_eq!(ex.reference.len(), 6);
    let vocab = VocabSet::build(std::slice::from_ref(&ex), 1).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for mode in MODES {
        let model = Model::new(tiny_config(mode), vocab.clone()).unwrap();
        let opts = GradCheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            roundoff_factor: 10.0,
            ..GradCheckOptions::default()
        };
        let report = numkit::gradient_check(&model.params, opts, |tape| {
            sequence_loss(tape, &model, &ex)
                .map(|lb| lb.loss)
                .map_err(|e| NumError::Invalid(e.to_string()))
        })
        .unwrap();
        let checked: usize = report.params.iter().map(|p| p.checked).sum();
        ok &= report.passed() && report.params.iter().all(|p| p.checked > 0);
        parts.push(format!(
            "{mode}: {} groups, max rel {:.1e} (unfloored {:.1e}, {}/{checked} below roundoff)",
            report.params.len(),
            report.max_rel_error(),
            report.max_rel_error_strict(),
            report.below_floor()
        ));
    }
    outcome(ok, parts.join("; "))
}

// ---------------------------------------------------------------- 3 and 5

fn corpus_model(mode: ModelMode, n: usize, seed: u64) -> (Model, Vec<Example>) {
    let corpus = synth_corpus(n, seed, &Schema::person()).unwrap();
    (small_model(mode, &corpus, seed), corpus)
}

fn small_model(mode: ModelMode, vocab_from: &[Example], seed: u64) -> Model {
    let vocab = VocabSet::build(vocab_from, 1).unwrap();
    let cfg = RunConfig {
        type_dim: 6,
        value_dim: 6,
        hidden: 8,
        attn_dim: 6,
        input_feeding: mode.uses_positions(),
        seed,
        ..tiny_config(mode)
    };
    Model::new(cfg, vocab).unwrap()
}

fn distribution_invariants() -> Outcome {
    let mut steps = 0usize;
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut rng = numkit::rng::seeded(3);
    let mut mode_i = 0;
    while steps < 1000 {
        let mode = MODES[mode_i % 4];
        mode_i += 1;
        let (model, corpus) = corpus_model(mode, 4, mode_i as u64);
        for ex in &corpus {
            let mut tape = Tape::new(&model.params);
            let prep = prepare(&mut tape, &model, &ex.kb).unwrap();
            if let Some(f) = prep.f {
                let f = tape.value(f);
                for i in 0..f.shape()[0] {
                    let e = (sum(f.row(i)) - 1.0).abs();
                    worst = worst.max(e);
                    ok &= e < 1e-8;
                }
            }
            let mut state = initial_state(&mut tape, &model, &prep).unwrap();
            ok &= tape.value(state.coverage).data().iter().all(|&c| c == 0.0);
            for _ in 0..25 {
                let out = decode_step(&mut tape, &model, &prep, &state, Gate::Learned).unwrap();
                let alpha = tape.value(out.alpha).data();
                let before = tape.value(state.coverage).data();
                let after = tape.value(out.state.coverage).data();
                ok &= (0..alpha.len()).all(|i| after[i] == before[i] + alpha[i]);
                let mut errs = vec![(sum(alpha) - 1.0).abs()];
                let dist = final_distribution(&tape, &prep, &out);
                ok &= dist.iter().all(|&p| p >= 0.0);
                errs.push((sum(&dist) - 1.0).abs());
                if let (Some(ps), Some(pg)) = (out.p_source, out.p_gen) {
                    errs.push((tape.value(ps).sum() - 1.0).abs());
                    let g = tape.value(pg).item();
                    ok &= g > 0.0 && g < 1.0;
                }
                for e in errs {
                    worst = worst.max(e);
                    ok &= e < 1e-8;
                }
                steps += 1;
                let next = rng.gen_range(0..model.vocab.words.len());
                let token = Token::from_key(model.vocab.words.token(next));
                state = feed_token(&mut tape, &model, &out.state, &token).unwrap();
            }
        }
    }
    outcome(ok, format!("{steps} steps over 4 modes; worst |sum - 1| {worst:.1e}; coverage updates exact"))
}

fn copy_endpoints() -> Outcome {
    // the vocabulary comes from other entities, so many values get extended ids
    let corpus = synth_corpus(12, 21, &Schema::person()).unwrap();
    let (seen, corpus) = corpus.split_at(2);
    let model = small_model(ModelMode::PointerTypePosition, seen, 21);
    let mut steps = 0;
    let mut ok = true;
    let mut oov = 0;
    let mut rng = numkit::rng::seeded(5);
    'outer: for ex in corpus.iter().cycle() {
        let mut tape = Tape::new(&model.params);
        let prep = prepare(&mut tape, &model, &ex.kb).unwrap();
        oov += prep.source.ext_len - prep.source.vocab_len;
        let mut state = initial_state(&mut tape, &model, &prep).unwrap();
        for _ in 0..10 {
            let learned = decode_step(&mut tape, &model, &prep, &state, Gate::Learned).unwrap();

            let copy = decode_step(&mut tape, &model, &prep, &state, Gate::Fixed(0.0)).unwrap();
            let dist = final_distribution(&tape, &prep, &copy);
            let ps = tape.value(copy.p_source.unwrap()).data();
            for (id, &p) in dist.iter().enumerate() {
                match prep.source.ext_ids.iter().position(|&e| e == id) {
                    Some(k) => ok &= p == ps[k],
                    None => ok &= p == 0.0,
                }
            }

            let gen = decode_step(&mut tape, &model, &prep, &state, Gate::Fixed(1.0)).unwrap();
            let dist = final_distribution(&tape, &prep, &gen);
            let pv = tape.value(gen.p_vocab).data();
            ok &= dist[..pv.len()] == *pv && dist[pv.len()..].iter().all(|&p| p == 0.0);

            steps += 1;
            if steps == 100 {
                break 'outer;
            }
            let next = rng.gen_range(0..prep.source.ext_len);
            let token = prep.source.token(&model, next);
            state = feed_token(&mut tape, &model, &learned.state, &token).unwrap();
        }
    }
    outcome(
        ok,
        format!("{steps} steps; p_gen=0 gives exactly P_source on KB values, p_gen=1 exactly P_vocab; {oov} OOV value slots seen"),
    )
}

// ---------------------------------------------------------------- 4

fn stationarity() -> Outcome {
    let (model, corpus) = corpus_model(ModelMode::PointerTypePosition, 1, 8);
    let ex = &corpus[0];
    let mut tape = Tape::new(&model.params);
    let prep = prepare(&mut tape, &model, &ex.kb).unwrap();
    let mut state = initial_state(&mut tape, &model, &prep).unwrap();
    let mut snapshots = Vec::new();
    for step in 1..=50 {
        let out = decode_step(&mut tape, &model, &prep, &state, Gate::Learned).unwrap();
        if [1, 5, 50].contains(&step) {
            // recompute from the row embeddings on the live tape
            let f = position_self_attention(&mut tape, &model.parts().position, prep.embedded.rows).unwrap();
            snapshots.push(tape.value(f).data().to_vec());
        }
        let best = argmax(&final_distribution(&tape, &prep, &out));
        let token = prep.source.token(&model, best);
        state = feed_token(&mut tape, &model, &out.state, &token).unwrap();
    }
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let first = bits(tape.value(prep.f.unwrap()).data());
    let ok = snapshots.iter().all(|s| bits(s) == first);
    let n = ex.kb.len();
    outcome(ok, format!("{n}x{n} F identical bit for bit at steps 1, 5 and 50"))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------- 6

fn overfit() -> Outcome {
    let corpus = synth_corpus(50, 1, &Schema::person()).unwrap();
    let cfg = RunConfig {
        mode: ModelMode::PointerTypePosition,
        type_dim: 32,
        value_dim: 32,
        hidden: 64,
        attn_dim: 32,
        lr: 0.01,
        min_freq: 1,
        epochs: 200,
        input_feeding: true,
        seed: 1,
        ..RunConfig::default()
    };
    let vocab = VocabSet::build(&corpus, cfg.min_freq).unwrap();
    let mut model = Model::new(cfg, vocab).unwrap();
    let start = Instant::now();
    let report = train(&mut model, &corpus, &[], |_| {}).unwrap();
    // the kept parameters are those of the epoch with the lowest train NLL
    let last = &report.epochs[report.best_epoch - 1];
    let exact = corpus
        .iter()
        .filter(|ex| greedy_decode(&model, &ex.kb, 120).unwrap().tokens == ex.reference)
        .count();
    let elapsed = start.elapsed();
    let ok = last.train_nll < 0.1 && exact >= 45 && elapsed < Duration::from_secs(600);
    outcome(
        ok,
        format!(
            "train NLL/token {:.4} at epoch {} of {} (loss with coverage {:.4}); {exact}/50 verbatim; {:.0}s",
            last.train_nll,
            report.best_epoch,
            report.epochs.len(),
            last.train_loss,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn ablation_config(mode: ModelMode) -> RunConfig {
    RunConfig {
        mode,
        type_dim: 32,
        value_dim: 32,
        hidden: 64,
        attn_dim: 32,
        lr: 0.01,
        init_scale: 0.2,
        epochs: 30,
        input_feeding: true,
        seed: 1,
        ..RunConfig::default()
    }
}

fn ablation() -> Outcome {
    let start = Instant::now();
    let corpus = synth_corpus(500, 1, &Schema::person()).unwrap();
    let (tr, dev, test) = split(&corpus, 1).unwrap();
    let mut scores = Vec::new();
    for mode in MODES {
        let cfg = ablation_config(mode);
        let vocab = VocabSet::build(&tr, cfg.min_freq).unwrap();
        let mut model = Model::new(cfg, vocab).unwrap();
        train(&mut model, &tr, &dev, |_| {}).unwrap();
        let gens: Vec<Generation> = test
            .iter()
            .map(|ex| {
                let d = greedy_decode(&model, &ex.kb, model.config.max_len).unwrap();
                Generation {
                    entity_id: ex.kb.entity_id().to_string(),
                    output: d.text,
                    logprob: d.logprob,
                }
            })
            .collect();
        let r = evaluate(&gens, &test).unwrap().reconstruction;
        scores.push((pct(r.overall.f1), pct(r.interdependent.f1)));
    }
    let [s2s, ptr, ty, pos] = [scores[0], scores[1], scores[2], scores[3]];
    let elapsed = start.elapsed();
    let ok = s2s.0 < ptr.0
        && ptr.0 < ty.0
        && ty.0 <= pos.0
        && pos.0 - ptr.0 >= 5.0
        && pos.1 > ty.1
        && elapsed < Duration::from_secs(3600);
    outcome(
        ok,
        format!(
            "overall F1 {:.1} / {:.1} / {:.1} / {:.1}, inter-dependent F1 {:.1} / {:.1} / {:.1} / {:.1} \
             (seq2seq / pointer / +type / +type+position, {} train, {} test); {:.0}s",
            s2s.0,
            ptr.0,
            ty.0,
            pos.0,
            s2s.1,
            ptr.1,
            ty.1,
            pos.1,
            tr.len(),
            test.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 8

struct Trap;

impl StepModel for Trap {
    type State = Vec<usize>;

    fn start(&mut self) -> kbgen::Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn step(&mut self, state: &Vec<usize>) -> kbgen::Result<(Vec<f64>, Vec<usize>)> {
        // 0 = EOS; the likelier first token leads to a flat second step
        let p = match state.as_slice() {
            [] => vec![0.0, 0.6, 0.4],
            [1] => vec![0.3, 0.35, 0.35],
            [2] => vec![0.9, 0.05, 0.05],
            _ => vec![1.0, 0.0, 0.0],
        };
        Ok((p.iter().map(|x: &f64| x.ln()).collect(), state.clone()))
    }

    fn feed(&mut self, state: &Vec<usize>, token: usize) -> kbgen::Result<Vec<usize>> {
        let mut s = state.clone();
        s.push(token);
        Ok(s)
    }

    fn eos(&self) -> usize {
        0
    }
}

fn decoding() -> Outcome {
    let (model, corpus) = corpus_model(ModelMode::PointerTypePosition, 100, 13);
    let same = corpus
        .iter()
        .filter(|ex| {
            let g = greedy_decode(&model, &ex.kb, 30).unwrap();
            let b = beam_decode(&model, &ex.kb, 1, 30).unwrap();
            g.ids == b.ids && g.tokens == b.tokens
        })
        .count();
    let g = greedy(&mut Trap, 2).unwrap();
    let b = beam_search(&mut Trap, 2, 2).unwrap();
    let ok = same == corpus.len() && b.logprob > g.logprob;
    outcome(
        ok,
        format!(
            "beam 1 equals greedy on {same}/{}; toy case greedy {:?} logprob {:.3}, beam 2 {:?} logprob {:.3}",
            corpus.len(),
            g.ids,
            g.logprob,
            b.ids,
            b.logprob
        ),
    )
}

// ---------------------------------------------------------------- 9

fn text_metrics() -> Outcome {
    let s = toks("she played for hapoel holon .");
    let identity = (bleu(&s, &s, 4).unwrap(), rouge_l(&s, &s));
    let (a, b) = (toks("a b c"), toks("d e f"));
    let disjoint = (bleu(&a, &b, 4).unwrap(), rouge_l(&a, &b));
    let fixture = bleu(&toks("the cat sat"), &toks("the cat sat down"), 4).unwrap();
    let ok = identity == (1.0, 1.0) && disjoint == (0.0, 0.0) && (fixture - 0.7165).abs() < 1e-4;
    outcome(
        ok,
        format!(
            "identity BLEU/ROUGE-L {}/{}, disjoint {}/{}, fixture BLEU {fixture:.6}",
            identity.0, identity.1, disjoint.0, disjoint.1
        ),
    )
}

// ---------------------------------------------------------------- 10

fn run_pipeline(dir: &Path) -> Vec<Vec<u8>> {
    let bin = env!("CARGO_BIN_EXE_kbgen");
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth", "--n", "40", "--out", &p("all.jsonl")],
        vec!["split", "--data", &p("all.jsonl"), "--out-dir", &p("")],
        vec![
            "train", "--data", &p("train.jsonl"), "--dev", &p("dev.jsonl"), "--out", &p("model.json"),
            "--mode", "pointer+type+position", "--epochs", "3", "--set", "type_dim=8", "--set", "value_dim=8",
            "--set", "hidden=12", "--set", "attn_dim=8", "--set", "min_freq=1", "--set", "input_feeding=true",
        ],
        vec!["generate", "--ckpt", &p("model.json"), "--data", &p("test.jsonl"), "--out", &p("gen.jsonl"), "--beam", "3"],
        vec!["evaluate", "--gen", &p("gen.jsonl"), "--gold", &p("test.jsonl"), "--out", &p("report.json")],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for args in steps {
        let out = Command::new(bin).args(&args).env("KBGEN_SEED", "2024").output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    ["model.json", "gen.jsonl", "report.json"].iter().map(|f| fs::read(dir.join(f)).unwrap()).collect()
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(a.path());
    let second = run_pipeline(b.path());
    let same: Vec<bool> = first.iter().zip(&second).map(|(x, y)| x == y).collect();
    outcome(
        same.iter().all(|&s| s),
        format!(
            "checkpoint {}, generations {}, report {} ({} checkpoint bytes)",
            verdict(same[0]),
            verdict(same[1]),
            verdict(same[2]),
            first[0].len()
        ),
    )
}

fn verdict(same: bool) -> &'static str {
    if same {
        "identical"
    } else {
        "DIFFERS"
    }
}

// ----------------------------------------------------------------

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric oracle", metric_oracle),
        ("gradient suite", gradient_suite),
        ("distribution invariants", distribution_invariants),
        ("stationarity of F", stationarity),
        ("copy endpoints", copy_endpoints),
        ("overfit check", overfit),
        ("ablation ordering", ablation),
        ("decoding", decoding),
        ("BLEU/ROUGE sanity", text_metrics),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("[{status}] {n:>2}. {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
