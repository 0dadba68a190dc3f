use std::fmt;

use crate::error::{Error, Result};

/// The discrete state space `[K]^D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceSpec {
    pub vocab_size: usize,
    pub seq_len: usize,
}

impl SpaceSpec {
    pub fn new(vocab_size: usize, seq_len: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::Config(format!("vocab_size must be >= 2, got {vocab_size}")));
        }
        if seq_len < 1 {
            return Err(Error::Config("seq_len must be >= 1".into()));
        }
        Ok(Self {
            vocab_size,
            seq_len,
        })
    }

    /// Check that `tokens` is a valid sequence in this space.
    pub fn check(&self, tokens: &TokenSequence) -> Result<()> {
        if tokens.len() != self.seq_len {
            return Err(Error::Shape(format!(
                "sequence length {} != seq_len {}",
                tokens.len(),
                self.seq_len
            )));
        }
        if let Some((pos, &tok)) = tokens
            .iter()
            .enumerate()
            .find(|(_, &tok)| tok >= self.vocab_size)
        {
            return Err(Error::Domain(format!(
                "token {tok} at position {pos} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// A sequence of token ids. Depending on where it is used it plays the
/// role of a noisy state, a dataset sample, a model prediction, or the
/// final clean sample of a rollout.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(pub Vec<usize>);

impl TokenSequence {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    pub fn filled(token: usize, len: usize) -> Self {
        Self(vec![token; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, usize> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Number of positions where `self` and `other` agree.
    pub fn matches(&self, other: &TokenSequence) -> usize {
        self.iter().zip(other.iter()).filter(|(a, b)| a == b).count()
    }
}

impl std::ops::Index<usize> for TokenSequence {
    type Output = usize;
    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_spaces() {
        assert!(SpaceSpec::new(1, 4).is_err());
        assert!(SpaceSpec::new(4, 0).is_err());
        assert!(SpaceSpec::new(2, 1).is_ok());
    }

    #[test]
    fn check_catches_length_and_range() {
        let s = SpaceSpec::new(3, 2).unwrap();
        assert!(s.check(&TokenSequence::new(vec![0, 2])).is_ok());
        assert!(matches!(
            s.check(&TokenSequence::new(vec![0])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            s.check(&TokenSequence::new(vec![0, 3])),
            Err(Error::Domain(_))
        ));
    }
}
