//! Splits a word sequence into model-sized chunks.
//!
//! A chunk is at most `max_len` words. When the remaining input does not
//! fit, the chunk ends right after the first boundary token found at a
//! 1-indexed position in `soft_start + 1 ..= max_len`; otherwise it is cut
//! at `max_len`. Positions restart at every chunk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkSpec {
    pub max_len: usize,
    pub soft_start: usize,
    pub boundary_token: String,
}

impl Default for ChunkSpec {
    fn default() -> Self {
        ChunkSpec { max_len: 128, soft_start: 100, boundary_token: ".".to_string() }
    }
}

impl ChunkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.soft_start == 0 || self.soft_start >= self.max_len {
            return Err(Error::InvalidConfig(format!(
                "chunk soft_start {} must be in 1..{}",
                self.soft_start, self.max_len
            )));
        }
        Ok(())
    }

    /// Length of the next chunk taken from the front of `words`.
    fn next_len<S: AsRef<str>>(&self, words: &[S]) -> usize {
        if words.len() <= self.max_len {
            return words.len();
        }
        words[self.soft_start..self.max_len]
            .iter()
            .position(|w| w.as_ref() == self.boundary_token)
            .map_or(self.max_len, |p| self.soft_start + p + 1)
    }
}

pub fn chunk<'a, S: AsRef<str>>(words: &'a [S], spec: &ChunkSpec) -> Vec<&'a [S]> {
    let mut chunks = Vec::new();
    let mut rest = words;
    while !rest.is_empty() {
        let (head, tail) = rest.split_at(spec.next_len(rest));
        chunks.push(head);
        rest = tail;
    }
    chunks
}

/// Chunk lengths only.
pub fn chunk_lengths<S: AsRef<str>>(words: &[S], spec: &ChunkSpec) -> Vec<usize> {
    chunk(words, spec).iter().map(|c| c.len()).collect()
}
