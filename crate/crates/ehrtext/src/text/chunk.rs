//! Splits a token id sequence into CLS-prefixed chunks of at most 256 ids.
//!
//! Chunks are kept at their true length (no padding), so every position in
//! a chunk is attended to; an attention mask would be all ones.

use super::vocab::CLS_ID;

pub const CHUNK_TOTAL: usize = 256;
pub const CHUNK_CONTENT: usize = CHUNK_TOTAL - 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoteChunks {
    pub chunks: Vec<Vec<usize>>,
}

impl NoteChunks {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Partitions `ids` in order into pieces of at most 255 tokens, each
/// prefixed with CLS. Empty input yields a single bare [CLS] chunk, so the
/// chunk count is ceil(max(n, 1) / 255).
pub fn chunk(ids: &[usize]) -> NoteChunks {
    if ids.is_empty() {
        return NoteChunks { chunks: vec![vec![CLS_ID]] };
    }
    let chunks = ids
        .chunks(CHUNK_CONTENT)
        .map(|piece| {
            let mut c = Vec::with_capacity(piece.len() + 1);
            c.push(CLS_ID);
            c.extend_from_slice(piece);
            c
        })
        .collect();
    NoteChunks { chunks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_fit_single_chunk() {
        let ids: Vec<usize> = (10..10 + 255).collect();
        let nc = chunk(&ids);
        assert_eq!(nc.len(), 1);
        assert_eq!(nc.chunks[0].len(), 256);
        assert_eq!(nc.chunks[0][0], CLS_ID);
        assert_eq!(&nc.chunks[0][1..], &ids[..]);
    }

    #[test]
    fn six_hundred_tokens_split_256_256_92() {
        let ids: Vec<usize> = (0..600).map(|i| 3 + i % 50).collect();
        let nc = chunk(&ids);
        let lens: Vec<usize> = nc.chunks.iter().map(|c| c.len()).collect();
        assert_eq!(lens, vec![256, 256, 91]);
    }

    #[test]
    fn empty_input_yields_bare_cls() {
        let nc = chunk(&[]);
        assert_eq!(nc.chunks, vec![vec![CLS_ID]]);
    }

    proptest! {
        #[test]
        fn chunk_count_and_bounds(n in 0usize..2000) {
            let ids: Vec<usize> = (0..n).map(|i| 3 + i % 97).collect();
            let nc = chunk(&ids);
            prop_assert_eq!(nc.len(), n.max(1).div_ceil(CHUNK_CONTENT));
            let mut rebuilt = Vec::new();
            for c in &nc.chunks {
                prop_assert!(c.len() <= CHUNK_TOTAL);
                prop_assert_eq!(c[0], CLS_ID);
                rebuilt.extend_from_slice(&c[1..]);
            }
            if n > 0 {
                prop_assert_eq!(rebuilt, ids);
            }
        }
    }
}
