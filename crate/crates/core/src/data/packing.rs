use serde::{Deserialize, Serialize};

use crate::data::tokenizer::PAD_ID;
use crate::error::{Error, Result};

/// Fixed-length run of tokens drawn from one or more documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedChunk {
    pub tokens: Vec<u32>,
    /// 1 for real tokens, 0 for trailing padding.
    pub mask: Vec<u8>,
}

impl PackedChunk {
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Concatenates documents in order and cuts the stream into `chunk`-token
/// pieces. Long documents spill into following chunks; only the final chunk
/// may be short, and it is right-padded.
pub fn pack_documents(docs: &[Vec<u32>], chunk: usize) -> Result<Vec<PackedChunk>> {
    if chunk < 2 {
        return Err(Error::InvalidArgument(format!(
            "chunk length {chunk} must be at least 2"
        )));
    }
    let stream: Vec<u32> = docs.iter().flatten().copied().collect();
    Ok(stream
        .chunks(chunk)
        .map(|piece| {
            let mut tokens = piece.to_vec();
            let mut mask = vec![1u8; piece.len()];
            tokens.resize(chunk, PAD_ID);
            mask.resize(chunk, 0);
            PackedChunk { tokens, mask }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_fit_is_one_chunk() {
        let chunks = pack_documents(&[vec![5, 6, 7, 8]], 4).unwrap();
        assert_eq!(
            chunks,
            vec![PackedChunk {
                tokens: vec![5, 6, 7, 8],
                mask: vec![1; 4]
            }]
        );
    }

    #[test]
    fn greedy_packing_across_documents() {
        let chunks = pack_documents(&[vec![10, 11, 12], vec![20, 21, 22]], 4).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].tokens, vec![10, 11, 12, 20]);
        assert_eq!(chunks[1].tokens, vec![21, 22, PAD_ID, PAD_ID]);
        assert_eq!(chunks[1].mask, vec![1, 1, 0, 0]);
    }

    #[test]
    fn long_document_splits() {
        let doc: Vec<u32> = (0..8).collect();
        let chunks = pack_documents(&[doc], 4).unwrap();
        assert_eq!(chunks.len(), 2);
        assert!(chunks.iter().all(|c| c.real_len() == 4));
    }

    #[test]
    fn rejects_tiny_chunks() {
        assert!(pack_documents(&[vec![1]], 1).is_err());
    }

    proptest! {
        #[test]
        fn conserves_tokens(docs in proptest::collection::vec(proptest::collection::vec(5u32..100, 0..20), 1..10), chunk in 2usize..16) {
            let chunks = pack_documents(&docs, chunk).unwrap();
            let total: usize = docs.iter().map(Vec::len).sum();
            prop_assert_eq!(chunks.iter().map(PackedChunk::real_len).sum::<usize>(), total);
            let flat: Vec<u32> = chunks.iter().flat_map(|c| c.tokens.iter().zip(&c.mask).filter(|(_, &m)| m == 1).map(|(&t, _)| t)).collect();
            prop_assert_eq!(flat, docs.concat());
            for c in chunks.iter().rev().skip(1) {
                prop_assert_eq!(c.real_len(), chunk);
            }
        }
    }
}
