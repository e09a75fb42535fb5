//! The full parameter set and its names.

use numkit::{Gru, ParamId, ParamSet, Tensor};

use crate::attention::{PositionAttention, SlotAttention};
use crate::config::RunConfig;
use crate::corpus::VocabSet;
use crate::encoder::{EmbeddingTables, Encoder};
use crate::error::{KbError, Result};

/// Output layer and copy-gate weights.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    /// `[hidden + type_dim + value_dim, |W|]`
    pub v: ParamId,
    pub b_vocab: ParamId,
    /// Copy gate: one column per input.
    pub gen_s: ParamId,
    pub gen_v: ParamId,
    pub gen_h: ParamId,
    pub gen_y: ParamId,
    pub b_gen: ParamId,
}

/// Parameter handles grouped by component.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub tables: EmbeddingTables,
    /// Target-word embeddings, `|W| × value_dim`.
    pub words: ParamId,
    pub encoder: Encoder,
    pub decoder: Gru,
    pub slot: SlotAttention,
    pub position: PositionAttention,
    pub output: OutputLayer,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: RunConfig,
    pub vocab: VocabSet,
    pub params: ParamSet,
    parts: Components,
}

fn register(config: &RunConfig, vocab: &VocabSet, seed: u64) -> Result<(ParamSet, Components)> {
    config.validate()?;
    let c = config;
    let scale = c.init_scale;
    let mut rng = numkit::rng::split(seed, 0);
    let mut p = ParamSet::new();
    let table = |p: &mut ParamSet, name: &str, rows: usize, cols: usize, rng: &mut numkit::rng::Rng64| {
        p.insert(name, Tensor::uniform(&[rows, cols], scale, rng))
    };
    let tables = EmbeddingTables {
        types: table(&mut p, "emb.type", vocab.types.len(), c.type_dim, &mut rng)?,
        values: table(&mut p, "emb.value", vocab.values.len(), c.value_dim, &mut rng)?,
        row_fwd: table(&mut p, "emb.row_fwd", c.max_rows, c.pos_dim, &mut rng)?,
        row_bwd: table(&mut p, "emb.row_bwd", c.max_rows, c.pos_dim, &mut rng)?,
    };
    let words = table(&mut p, "emb.word", vocab.words.len(), c.value_dim, &mut rng)?;
    let half = c.hidden / 2;
    let encoder = Encoder {
        fwd: Gru::register(&mut p, "enc.fwd", c.slot_dim(), half, scale, &mut rng)?,
        bwd: Gru::register(&mut p, "enc.bwd", c.slot_dim(), half, scale, &mut rng)?,
    };
    let decoder = Gru::register(&mut p, "dec", c.decoder_input_dim(), c.hidden, scale, &mut rng)?;
    let slot = SlotAttention::register(&mut p, (c.hidden, c.type_dim, c.value_dim, c.attn_dim), scale, &mut rng)?;
    let position = PositionAttention::register(&mut p, c.pos_dim, c.attn_dim, scale, &mut rng)?;
    let out_in = c.hidden + c.type_dim + c.value_dim;
    let output = OutputLayer {
        v: table(&mut p, "out.V", out_in, vocab.words.len(), &mut rng)?,
        b_vocab: p.insert("out.b_vocab", Tensor::zeros(&[vocab.words.len()]))?,
        gen_s: table(&mut p, "gen.W_s", c.type_dim, 1, &mut rng)?,
        gen_v: table(&mut p, "gen.W_v", c.value_dim, 1, &mut rng)?,
        gen_h: table(&mut p, "gen.W_h", c.hidden, 1, &mut rng)?,
        gen_y: table(&mut p, "gen.W_y", c.value_dim, 1, &mut rng)?,
        b_gen: p.insert("gen.b_gen", Tensor::zeros(&[1]))?,
    };
    let parts = Components {
        tables,
        words,
        encoder,
        decoder,
        slot,
        position,
        output,
    };
    Ok((p, parts))
}

impl Model {
    /// Fresh model with uniform random weights and zero biases, seeded by
    /// `config.seed`.
    pub fn new(config: RunConfig, vocab: VocabSet) -> Result<Self> {
        let (params, parts) = register(&config, &vocab, config.seed)?;
        Ok(Self {
            config,
            vocab,
            params,
            parts,
        })
    }

    /// Rebuild from stored arrays. Every expected name must be present with
    /// the shape implied by the config and vocabulary, and nothing else.
    pub fn from_params(config: RunConfig, vocab: VocabSet, params: ParamSet) -> Result<Self> {
        let (expected, parts) = register(&config, &vocab, 0)?;
        if params.len() != expected.len() {
            return Err(KbError::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                expected.len(),
                params.len()
            )));
        }
        let mut ordered = ParamSet::new();
        for (_, name, want) in expected.iter() {
            let have = params
                .by_name(name)
                .ok_or_else(|| KbError::Checkpoint(format!("missing parameter {name}")))?;
            if have.shape() != want.shape() {
                return Err(KbError::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
            ordered.insert(name, have.clone())?;
        }
        Ok(Self {
            config,
            vocab,
            params: ordered,
            parts,
        })
    }

    pub fn parts(&self) -> &Components {
        &self.parts
    }
}
