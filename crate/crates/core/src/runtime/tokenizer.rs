//! Byte-level tokenizer: token id equals byte value.

use crate::error::{IrisError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteTokenizer {
    vocab_size: usize,
}

impl ByteTokenizer {
    pub fn new(vocab_size: usize) -> Self {
        ByteTokenizer { vocab_size }
    }

    pub fn tokenize(&self, text: &[u8]) -> Result<Vec<u32>> {
        text.iter()
            .map(|&b| {
                if (b as usize) < self.vocab_size {
                    Ok(b as u32)
                } else {
                    Err(IrisError::TokenOutOfRange {
                        id: b as u32,
                        vocab_size: self.vocab_size,
                    })
                }
            })
            .collect()
    }

    /// Fails on ids outside the vocabulary and on ids that are not bytes.
    pub fn detokenize(&self, tokens: &[u32]) -> Result<Vec<u8>> {
        tokens
            .iter()
            .map(|&t| {
                if (t as usize) < self.vocab_size && t < 256 {
                    Ok(t as u8)
                } else {
                    Err(IrisError::TokenOutOfRange {
                        id: t,
                        vocab_size: self.vocab_size,
                    })
                }
            })
            .collect()
    }

    /// Detokenizes and renders as UTF-8, replacing invalid sequences and
    /// skipping non-byte ids.
    pub fn render(&self, tokens: &[u32]) -> String {
        let bytes: Vec<u8> = tokens.iter().filter(|&&t| t < 256).map(|&t| t as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bytes_map_to_ids() {
        let tok = ByteTokenizer::new(256);
        assert_eq!(tok.tokenize(b"AB").unwrap(), vec![65, 66]);
        assert_eq!(tok.detokenize(&[]).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn out_of_vocab_ids_fail() {
        let tok = ByteTokenizer::new(256);
        assert!(matches!(
            tok.detokenize(&[300]),
            Err(IrisError::TokenOutOfRange { id: 300, .. })
        ));
        let small = ByteTokenizer::new(100);
        assert!(small.tokenize(b"z").is_err());
        assert!(small.detokenize(&[120]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let tok = ByteTokenizer::new(256);
            let ids = tok.tokenize(&bytes).unwrap();
            prop_assert_eq!(tok.detokenize(&ids).unwrap(), bytes);
        }
    }
}
