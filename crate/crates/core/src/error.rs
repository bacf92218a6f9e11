use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unrecognized format")]
    UnrecognizedFormat,
    #[error("token out of range: {token} >= vocab size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: u32 },
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error("invalid token stream: {0}")]
    InvalidStream(String),
    #[error("baseline support violation: token {0} has zero baseline probability")]
    BaselineSupportViolation(u32),
    #[error("degenerate spectrum")]
    DegenerateSpectrum,
    #[error("rank out of range: {rank} > {len}")]
    RankOutOfRange { rank: usize, len: usize },
    #[error("insufficient points")]
    InsufficientPoints,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("window out of range")]
    WindowOutOfRange,
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),
    #[error("invalid loss curve: {0}")]
    InvalidCurve(String),
    #[error("invalid markov spec: {0}")]
    InvalidMarkovSpec(String),
    #[error("unknown spectrum method {0:?}")]
    UnknownMethod(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
