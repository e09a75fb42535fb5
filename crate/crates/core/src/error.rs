use numkit::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KbError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid knowledge base: {0}")]
    InvalidKb(String),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown model mode {0:?}; expected one of seq2seq, pointer, pointer+type, pointer+type+position")]
    UnknownMode(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, KbError>;
