//! Versioned JSON checkpoints: named parameter arrays plus the config and
//! vocabulary they belong to, each with a SHA-256 hash that is checked on
//! load.

use std::path::Path;

use numkit::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::VocabSet;
use crate::error::{KbError, Result};
use crate::model::Model;

const FORMAT: &str = "kbgen-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    format: String,
    version: u32,
    config: String,
    config_hash: String,
    vocab: String,
    vocab_hash: String,
    params: Vec<StoredParam>,
}

pub fn to_json(model: &Model) -> String {
    let stored = Stored {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config.to_text(),
        config_hash: model.config.hash(),
        vocab: model.vocab.to_json(),
        vocab_hash: model.vocab.hash(),
        params: model
            .params
            .iter()
            .map(|(_, name, t)| StoredParam {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&stored).expect("checkpoint serializes")
}

pub fn from_json(text: &str) -> Result<Model> {
    let stored: Stored = serde_json::from_str(text)?;
    if stored.format != FORMAT || stored.version != VERSION {
        return Err(KbError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            stored.format, stored.version
        )));
    }
    let config = RunConfig::from_text(&stored.config)?;
    if config.hash() != stored.config_hash {
        return Err(KbError::Checkpoint("config hash mismatch".into()));
    }
    let vocab = VocabSet::from_json(&stored.vocab)?;
    if vocab.hash() != stored.vocab_hash {
        return Err(KbError::Checkpoint("vocabulary hash mismatch".into()));
    }
    let mut params = ParamSet::new();
    for p in stored.params {
        let t = Tensor::new(p.shape, p.data).map_err(|e| KbError::Checkpoint(format!("parameter {}: {e}", p.name)))?;
        params
            .insert(&p.name, t)
            .map_err(|e| KbError::Checkpoint(e.to_string()))?;
    }
    Model::from_params(config, vocab, params)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    from_json(&std::fs::read_to_string(path)?)
}
