//! Run configuration and the flat `key = value` file format.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::corpus::Linearization;
use crate::error::{KbError, Result};

/// The four model variants, from plain sequence-to-sequence up to the full
/// model with table position self-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelMode {
    Seq2Seq,
    Pointer,
    PointerType,
    PointerTypePosition,
}

impl ModelMode {
    pub const ALL: [ModelMode; 4] = [Self::Seq2Seq, Self::Pointer, Self::PointerType, Self::PointerTypePosition];

    pub fn name(self) -> &'static str {
        match self {
            Self::Seq2Seq => "seq2seq",
            Self::Pointer => "pointer",
            Self::PointerType => "pointer+type",
            Self::PointerTypePosition => "pointer+type+position",
        }
    }

    pub fn linearization(self) -> Linearization {
        match self {
            Self::Seq2Seq => Linearization::Seq2Seq,
            Self::Pointer => Linearization::ValuesOnly,
            Self::PointerType => Linearization::TypedPairs,
            Self::PointerTypePosition => Linearization::TypedPositions,
        }
    }

    pub fn copies(self) -> bool {
        self != Self::Seq2Seq
    }

    pub fn uses_positions(self) -> bool {
        self == Self::PointerTypePosition
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelMode {
    type Err = KbError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| KbError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: ModelMode,
    pub type_dim: usize,
    pub value_dim: usize,
    pub pos_dim: usize,
    /// Decoder hidden size; each encoder direction gets half.
    pub hidden: usize,
    pub attn_dim: usize,
    /// Rows covered by the position tables.
    pub max_rows: usize,
    pub lambda: f64,
    pub lr: f64,
    pub min_freq: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip: f64,
    pub init_scale: f64,
    pub beam: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Feed the previous step's context vectors into the decoder GRU
    /// alongside the previous token.
    pub input_feeding: bool,
    /// Stop once the mean per-token training loss drops below this value
    /// (0 disables).
    pub target_loss: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: ModelMode::PointerTypePosition,
            type_dim: 256,
            value_dim: 256,
            pos_dim: 5,
            hidden: 256,
            attn_dim: 256,
            max_rows: 64,
            lambda: 1.5,
            lr: 0.001,
            min_freq: 5,
            batch_size: 8,
            epochs: 20,
            clip: 2.0,
            init_scale: 0.08,
            beam: 4,
            max_len: 100,
            seed: 1,
            input_feeding: false,
            target_loss: 0.0,
        }
    }
}

const KEYS: [&str; 20] = [
    "mode", "type_dim", "value_dim", "pos_dim", "hidden", "attn_dim", "max_rows", "lambda", "lr", "min_freq",
    "batch_size", "epochs", "clip", "init_scale", "beam", "max_len", "seed", "input_feeding", "target_loss",
    "slot_dim",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| KbError::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Width of one encoder input item.
    pub fn slot_dim(&self) -> usize {
        self.type_dim + self.value_dim + 2 * self.pos_dim
    }

    pub fn decoder_input_dim(&self) -> usize {
        if self.input_feeding {
            self.value_dim + self.type_dim + self.value_dim
        } else {
            self.value_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("type_dim", self.type_dim),
            ("value_dim", self.value_dim),
            ("pos_dim", self.pos_dim),
            ("hidden", self.hidden),
            ("attn_dim", self.attn_dim),
            ("max_rows", self.max_rows),
            ("min_freq", self.min_freq),
            ("batch_size", self.batch_size),
            ("beam", self.beam),
            ("max_len", self.max_len),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(KbError::Config(format!("{name} must be positive")));
            }
        }
        if !self.hidden.is_multiple_of(2) {
            return Err(KbError::Config("hidden must be even (split across two encoder directions)".into()));
        }
        if !(self.lambda >= 0.0 && self.lr >= 0.0 && self.clip > 0.0 && self.init_scale > 0.0 && self.target_loss >= 0.0) {
            return Err(KbError::Config("lambda, lr and target_loss must be >= 0; clip and init_scale > 0".into()));
        }
        Ok(())
    }

    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "mode" => self.mode = value.parse()?,
            "type_dim" => self.type_dim = parse(key, value)?,
            "value_dim" => self.value_dim = parse(key, value)?,
            "pos_dim" => self.pos_dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "attn_dim" => self.attn_dim = parse(key, value)?,
            "max_rows" => self.max_rows = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "beam" => self.beam = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "input_feeding" => self.input_feeding = parse(key, value)?,
            "target_loss" => self.target_loss = parse(key, value)?,
            // derived; accepted so that written files read back, but must agree
            "slot_dim" => {
                let v: usize = parse(key, value)?;
                if v != self.slot_dim() {
                    return Err(KbError::Config(format!(
                        "slot_dim {v} does not equal type_dim + value_dim + 2 * pos_dim = {}",
                        self.slot_dim()
                    )));
                }
            }
            _ => return Err(KbError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply a `key = value` file on top of `self`. Blank lines and `#`
    /// comments are ignored. `slot_dim` is checked after all other keys.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut slot_dim = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| KbError::Config(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if k == "slot_dim" {
                slot_dim = Some(v.to_string());
                continue;
            }
            self.set(k, v).map_err(|e| match e {
                KbError::Config(m) => KbError::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        if let Some(v) = slot_dim {
            self.set("slot_dim", &v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn get(&self, key: &str) -> String {
        match key {
            "mode" => self.mode.to_string(),
            "type_dim" => self.type_dim.to_string(),
            "value_dim" => self.value_dim.to_string(),
            "pos_dim" => self.pos_dim.to_string(),
            "hidden" => self.hidden.to_string(),
            "attn_dim" => self.attn_dim.to_string(),
            "max_rows" => self.max_rows.to_string(),
            "lambda" => format!("{:?}", self.lambda),
            "lr" => format!("{:?}", self.lr),
            "min_freq" => self.min_freq.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "clip" => format!("{:?}", self.clip),
            "init_scale" => format!("{:?}", self.init_scale),
            "beam" => self.beam.to_string(),
            "max_len" => self.max_len.to_string(),
            "seed" => self.seed.to_string(),
            "input_feeding" => self.input_feeding.to_string(),
            "target_loss" => format!("{:?}", self.target_loss),
            "slot_dim" => self.slot_dim().to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Canonical file form, one key per line in a fixed order.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = RunConfig::default();
        assert_eq!((c.type_dim, c.value_dim, c.pos_dim, c.hidden), (256, 256, 5, 256));
        assert_eq!(c.slot_dim(), 522);
        assert_eq!((c.lambda, c.lr, c.min_freq), (1.5, 0.001, 5));
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c = RunConfig { mode: ModelMode::Pointer, lr: 0.003, input_feeding: true, type_dim: 16, ..Default::default() };
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(RunConfig::default().hash(), c.hash());
    }

    #[test]
    fn comments_and_errors() {
        let c = RunConfig::from_text("# tiny\nhidden = 32 # even\n\nmode=seq2seq\n").unwrap();
        assert_eq!((c.hidden, c.mode), (32, ModelMode::Seq2Seq));
        assert!(RunConfig::from_text("hidden = 33").is_err());
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("lr = fast").unwrap_err().to_string().contains("line 1"));
        assert!(RunConfig::from_text("type_dim = 8\nslot_dim = 522").is_err());
        let err = RunConfig::from_text("mode = bogus").unwrap_err().to_string();
        for m in ModelMode::ALL {
            assert!(err.contains(m.name()), "{err}");
        }
    }
}
