mod common;

use common::*;
use kbgen::corpus::{KnowledgeBase, VocabSet};
use kbgen::encoder::{embed_triples, encode};
use kbgen::{Model, ModelMode, RunConfig};
use numkit::{Tape, Tensor};

fn embedding_oracle(model: &Model, kb: &KnowledgeBase) -> Vec<Vec<f64>> {
    let p = &model.params;
    kb.triples()
        .iter()
        .map(|t| {
            let mut l = param(p, "emb.type").row(model.vocab.type_id(&t.slot_type)).to_vec();
            l.extend_from_slice(param(p, "emb.value").row(model.vocab.value_id(&t.slot_value)));
            l.extend_from_slice(param(p, "emb.row_fwd").row(t.row - 1));
            l.extend_from_slice(param(p, "emb.row_bwd").row(t.row_back - 1));
            l
        })
        .collect()
}

#[test]
fn default_width_is_522() {
    let vocab = VocabSet::build(&[example6()], 1).unwrap();
    let model = Model::new(RunConfig::default(), vocab).unwrap();
    let mut tape = Tape::new(&model.params);
    let e = embed_triples(&mut tape, &model.parts().tables, &model.vocab, &kb3()).unwrap();
    assert_eq!(tape.shape(e.l), &[3, 522]);
}

#[test]
fn zero_tables_give_zero_inputs() {
    let mut model = tiny_model(ModelMode::PointerTypePosition);
    for name in ["emb.type", "emb.value", "emb.row_fwd", "emb.row_bwd"] {
        let id = model.params.id(name).unwrap();
        let shape = model.params.get(id).shape().to_vec();
        model.params.set(id, Tensor::zeros(&shape)).unwrap();
    }
    let mut tape = Tape::new(&model.params);
    let e = embed_triples(&mut tape, &model.parts().tables, &model.vocab, &kb3()).unwrap();
    assert!(tape.value(e.l).data().iter().all(|&x| x == 0.0));
}

#[test]
fn embeddings_match_table_rows_and_share_positions() {
    let model = tiny_model(ModelMode::PointerTypePosition);
    let kb = kb3();
    let mut tape = Tape::new(&model.params);
    let e = embed_triples(&mut tape, &model.parts().tables, &model.vocab, &kb).unwrap();
    let l = tape.value(e.l);
    for (i, want) in embedding_oracle(&model, &kb).iter().enumerate() {
        assert_eq!(l.row(i), &want[..]);
    }
    // triples 0 and 1 share row 1: same position part, different type/value
    let pos = |i: usize| l.row(i)[6..].to_vec();
    assert_eq!(pos(0), pos(1));
    assert_ne!(pos(0), pos(2));
    assert_ne!(l.row(0)[..6], l.row(1)[..6]);
}

#[test]
fn rows_beyond_table_are_rejected() {
    let model = tiny_model(ModelMode::PointerTypePosition);
    let kb = KnowledgeBase::new("e", (1..=9).map(|i| ("Team", format!("t{i}"), i)).collect::<Vec<_>>()).unwrap();
    let mut tape = Tape::new(&model.params);
    let err = embed_triples(&mut tape, &model.parts().tables, &model.vocab, &kb).unwrap_err();
    assert!(err.to_string().contains("exceeds"), "{err}");
}

#[test]
fn matches_step_by_step_oracle() {
    let model = tiny_model(ModelMode::PointerTypePosition);
    let kb = kb3();
    let mut tape = Tape::new(&model.params);
    let e = embed_triples(&mut tape, &model.parts().tables, &model.vocab, &kb).unwrap();
    let out = encode(&mut tape, &model.parts().encoder, e.l).unwrap();

    let xs = embedding_oracle(&model, &kb);
    let half = model.config.hidden / 2;
    let mut fwd = Vec::new();
    let mut h = vec![0.0; half];
    for x in &xs {
        h = gru_oracle(&model.params, "enc.fwd", x, &h);
        fwd.push(h.clone());
    }
    let mut bwd = vec![Vec::new(); xs.len()];
    let mut h = vec![0.0; half];
    for i in (0..xs.len()).rev() {
        h = gru_oracle(&model.params, "enc.bwd", &xs[i], &h);
        bwd[i] = h.clone();
    }
    assert_eq!(out.states.len(), 3);
    for i in 0..3 {
        let want: Vec<f64> = fwd[i].iter().chain(&bwd[i]).copied().collect();
        assert_close(tape.value(out.states[i]).data(), &want, 1e-12);
    }
    let h_n: Vec<f64> = fwd[2].iter().chain(&bwd[0]).copied().collect();
    assert_close(tape.value(out.h_n).data(), &h_n, 1e-12);
}

#[test]
fn single_triple_with_zero_weights_encodes_to_zero() {
    let mut model = tiny_model(ModelMode::PointerTypePosition);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        if model.params.name(id).starts_with("enc.") {
            let shape = model.params.get(id).shape().to_vec();
            model.params.set(id, Tensor::zeros(&shape)).unwrap();
        }
    }
    let kb = KnowledgeBase::new("e", [("Team", "Hapoel Holon", 1)]).unwrap();
    let mut tape = Tape::new(&model.params);
    let e = embed_triples(&mut tape, &model.parts().tables, &model.vocab, &kb).unwrap();
    let out = encode(&mut tape, &model.parts().encoder, e.l).unwrap();
    assert!(tape.value(out.states[0]).data().iter().all(|&x| x == 0.0));
}

#[test]
fn reversing_input_swaps_directions() {
    let mut model = tiny_model(ModelMode::PointerTypePosition);
    // tie the backward cell to the forward one
    for n in ["W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_n", "U_n", "b_n"] {
        let src = param(&model.params, &format!("enc.fwd.{n}")).clone();
        let id = model.params.id(&format!("enc.bwd.{n}")).unwrap();
        model.params.set(id, src).unwrap();
    }
    let mut tape = Tape::new(&model.params);
    let l = tape.constant(Tensor::uniform(&[4, model.config.slot_dim()], 1.0, &mut numkit::rng::seeded(3)));
    let rev_rows: Vec<usize> = (0..4).rev().collect();
    let l_rev = tape.gather(l, &rev_rows).unwrap();
    let a = encode(&mut tape, &model.parts().encoder, l).unwrap();
    let b = encode(&mut tape, &model.parts().encoder, l_rev).unwrap();
    let half = model.config.hidden / 2;
    for i in 0..4 {
        let fwd_rev = &tape.value(b.states[i]).data()[..half];
        let bwd_orig = &tape.value(a.states[3 - i]).data()[half..];
        assert_eq!(fwd_rev, bwd_orig);
    }
}

#[test]
fn first_state_depends_on_last_value() {
    let model = tiny_model(ModelMode::PointerTypePosition);
    let kb = kb3();
    let mut tape = Tape::new(&model.params);
    let e = embed_triples(&mut tape, &model.parts().tables, &model.vocab, &kb).unwrap();
    let out = encode(&mut tape, &model.parts().encoder, e.l).unwrap();
    let loss = tape.sum(out.states[0]);
    let grads = tape.backward(loss).unwrap();
    let table = grads.get(model.params.id("emb.value").unwrap());
    let last = model.vocab.value_id("Israel");
    assert!(table.row(last).iter().any(|&g| g != 0.0));
}

#[test]
fn empty_input_is_an_error() {
    let model = tiny_model(ModelMode::PointerTypePosition);
    let mut tape = Tape::new(&model.params);
    let l = tape.zeros(&[0, model.config.slot_dim()]);
    assert!(encode(&mut tape, &model.parts().encoder, l).is_err());
}
