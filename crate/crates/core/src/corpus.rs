//! Token streams and the `.toks` binary container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic     4 bytes  "SPFK"
//! version   u32      1
//! vocab     u32
//! count     u64
//! tokens    count x u32
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SPFK";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// A corpus: token ids together with the size of the id space they are drawn from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenStream {
    tokens: Vec<u32>,
    vocab_size: u32,
}

impl TokenStream {
    pub fn new(tokens: Vec<u32>, vocab_size: u32) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if vocab_size == 0 || vocab_size > i32::MAX as u32 {
            return Err(Error::InvalidStream(format!(
                "vocab size {vocab_size} outside 1..=2^31-1"
            )));
        }
        if let Some(&token) = tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::TokenOutOfRange { token, vocab_size });
        }
        Ok(TokenStream { tokens, vocab_size })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.tokens.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.vocab_size.to_le_bytes());
        out.extend_from_slice(&(self.tokens.len() as u64).to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::UnrecognizedFormat);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::CorruptStream("truncated header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnrecognizedFormat);
        }
        let vocab_size = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let body = &bytes[HEADER_LEN..];
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| Error::CorruptStream("token count overflows".into()))?;
        if body.len() as u64 != expected {
            return Err(Error::CorruptStream(format!(
                "header declares {count} tokens but body holds {} bytes",
                body.len()
            )));
        }
        let tokens = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        TokenStream::new(tokens, vocab_size)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }
}

/// Byte-level tokenization: every byte is its own token, vocabulary 256.
pub fn tokenize_bytes(raw: &[u8]) -> Result<TokenStream> {
    TokenStream::new(raw.iter().map(|&b| u32::from(b)).collect(), 256)
}

pub fn load_token_stream(path: impl AsRef<Path>) -> Result<TokenStream> {
    TokenStream::from_bytes(&fs::read(path)?)
}

/// Prefix truncation to at most `target` tokens.
pub fn prepare_corpus(stream: &TokenStream, target: usize) -> Result<TokenStream> {
    if target < 2 {
        return Err(Error::InvalidStream(format!(
            "prepared size must be at least 2, got {target}"
        )));
    }
    let keep = target.min(stream.len());
    Ok(TokenStream {
        tokens: stream.tokens[..keep].to_vec(),
        vocab_size: stream.vocab_size,
    })
}

/// Parses whitespace-separated decimal token ids. With no explicit vocabulary the
/// size is one past the largest id.
pub fn parse_token_ids(text: &str, vocab_size: Option<u32>) -> Result<TokenStream> {
    let tokens = text
        .split_ascii_whitespace()
        .map(|w| {
            w.parse::<u32>()
                .map_err(|e| Error::Parse(format!("token {w:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let vocab = match vocab_size {
        Some(v) => v,
        None => tokens.iter().max().map_or(0, |&m| m.saturating_add(1)),
    };
    TokenStream::new(tokens, vocab)
}
