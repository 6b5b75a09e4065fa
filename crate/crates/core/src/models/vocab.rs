//! Byte-level vocabulary: ids `0..256` are raw bytes, followed by four
//! special tokens.

use crate::error::{Error, Result};

pub const PAD: usize = 256;
pub const EOS: usize = 257;
pub const SEP: usize = 258;
pub const CLS: usize = 259;
pub const VOCAB_SIZE: usize = 260;

pub fn encode(bytes: &[u8]) -> Vec<usize> {
    bytes.iter().map(|b| *b as usize).collect()
}

/// Inverse of [`encode`]; special tokens are dropped.
pub fn decode(ids: &[usize]) -> Vec<u8> {
    ids.iter().filter(|i| **i < 256).map(|i| *i as u8).collect()
}

/// UTF-8 bytes of `text`, cut to `max_len − 1` and terminated by `EOS`.
pub fn tokenize(text: &str, max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::Parameter("max_len must be >= 1".into()));
    }
    let bytes = text.as_bytes();
    let mut ids = encode(&bytes[..bytes.len().min(max_len - 1)]);
    ids.push(EOS);
    Ok(ids)
}
