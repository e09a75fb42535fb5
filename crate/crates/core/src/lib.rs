//! Structured knowledge-base to text generation: corpus handling, a GRU
//! encoder-decoder with slot-aware attention, table position self-attention
//! and a copy mechanism, decoding, and evaluation.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod generator;
pub mod inference;
pub mod metrics;
pub mod model;

pub use config::{ModelMode, RunConfig};
pub use error::{KbError, Result};
pub use model::Model;
