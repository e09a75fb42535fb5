mod common;

use common::*;
use kbgen::checkpoint::{from_json, load, save, to_json};
use kbgen::inference::greedy_decode;
use kbgen::ModelMode;

#[test]
fn round_trip_is_bit_exact() {
    let model = tiny_model(ModelMode::PointerTypePosition);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save(&model, &path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.vocab.hash(), model.vocab.hash());
    for (id, name, t) in model.params.iter() {
        let other = back.params.by_name(name).unwrap();
        assert_eq!(t.shape(), other.shape());
        let same = t.data().iter().zip(other.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{name} ({id:?})");
    }
    assert_eq!(to_json(&back), std::fs::read_to_string(&path).unwrap());
    let kb = kb3();
    assert_eq!(greedy_decode(&model, &kb, 8).unwrap().ids, greedy_decode(&back, &kb, 8).unwrap().ids);
}

#[test]
fn tampering_is_detected() {
    let model = tiny_model(ModelMode::Pointer);
    let text = to_json(&model);
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();

    let mut bad = v.clone();
    bad["config"] = serde_json::Value::String(bad["config"].as_str().unwrap().replace("lambda = 1.5", "lambda = 2"));
    let err = from_json(&bad.to_string()).unwrap_err();
    assert!(err.to_string().contains("config hash"), "{err}");

    let mut bad = v.clone();
    bad["vocab_hash"] = serde_json::Value::String("00".into());
    assert!(from_json(&bad.to_string()).unwrap_err().to_string().contains("vocabulary hash"));

    let mut bad = v.clone();
    bad["version"] = serde_json::json!(7);
    assert!(from_json(&bad.to_string()).is_err());

    // a parameter with the wrong shape
    let params = v["params"].as_array_mut().unwrap();
    params[0]["shape"] = serde_json::json!([1, 1]);
    assert!(from_json(&v.to_string()).is_err());
}
