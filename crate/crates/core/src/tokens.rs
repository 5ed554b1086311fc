use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Immutable, cheaply clonable sequence of token ids.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(Arc<[TokenId]>);

impl TokenSequence {
    pub fn new(tokens: impl Into<Arc<[TokenId]>>) -> Self {
        Self(tokens.into())
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<TokenId> {
        self.0.to_vec()
    }

    /// Checks every id against a vocabulary size.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        check_vocab(&self.0, vocab_size)
    }
}

pub(crate) fn check_vocab(tokens: &[TokenId], vocab_size: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t as usize >= vocab_size) {
        Some(&token) => Err(Error::TokenOutOfVocab { token, vocab_size }),
        None => Ok(()),
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v.into())
    }
}

impl From<&[TokenId]> for TokenSequence {
    fn from(v: &[TokenId]) -> Self {
        Self(v.into())
    }
}

impl FromIterator<TokenId> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl fmt::Debug for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() <= 16 {
            f.debug_tuple("TokenSequence").field(&&self.0[..]).finish()
        } else {
            write!(
                f,
                "TokenSequence(len={}, head={:?})",
                self.0.len(),
                &self.0[..8]
            )
        }
    }
}

/// Returns the offset of the first contiguous occurrence of `needle` in `haystack`.
pub fn find_subsequence(haystack: &[TokenId], needle: &[TokenId]) -> Option<usize> {
    if needle.is_empty() {
        return Some(0);
    }
    if needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Parses a token file: decimal ids separated by whitespace and/or commas.
/// Lines starting with `#` are comments.
pub fn parse_token_file(text: &str) -> Result<TokenSequence> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        for field in line.split(|c: char| c.is_whitespace() || c == ',') {
            if field.is_empty() {
                continue;
            }
            let id = field.parse::<TokenId>().map_err(|e| {
                Error::InvalidInput(format!("line {}: bad token id {field:?}: {e}", lineno + 1))
            })?;
            out.push(id);
        }
    }
    Ok(out.into())
}
