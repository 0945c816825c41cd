//! Whitespace-token vocabulary over normalized text.
//!
//! Ids 0..=2 are reserved (PAD, UNK, CLS) and never reassigned. Corpus
//! tokens get ids from 3 upward, ordered by descending frequency with ties
//! broken by token string, so a rebuild from the same corpus is bitwise
//! reproducible.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const RESERVED: usize = 3;

const RESERVED_TOKENS: [&str; RESERVED] = ["<pad>", "<unk>", "<cls>"];

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabEntry {
    token: String,
    id: usize,
    frequency: u64,
}

#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: BTreeMap<String, usize>,
    tokens: Vec<String>,
    frequencies: Vec<u64>,
}

impl Vocab {
    /// Counts whitespace tokens across `docs` (already-normalized text) and
    /// keeps those appearing at least `min_freq` times.
    pub fn build<'a, I>(docs: I, min_freq: u64) -> Vocab
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for doc in docs {
            for tok in doc.split_whitespace() {
                *counts.entry(tok.to_string()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut vocab = Vocab::reserved_only();
        for (token, freq) in kept {
            let id = vocab.tokens.len();
            vocab.token_to_id.insert(token.clone(), id);
            vocab.tokens.push(token);
            vocab.frequencies.push(freq);
        }
        vocab
    }

    fn reserved_only() -> Vocab {
        Vocab {
            token_to_id: BTreeMap::new(),
            tokens: RESERVED_TOKENS.iter().map(|s| s.to_string()).collect(),
            frequencies: vec![0; RESERVED],
        }
    }

    /// Total id count including the three reserved ids; also the row count
    /// of the token embedding table.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id_of(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Maps normalized text to token ids, UNK for out-of-vocabulary tokens.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|t| self.id_of(t)).collect()
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<VocabEntry> = (RESERVED..self.tokens.len())
            .map(|id| VocabEntry {
                token: self.tokens[id].clone(),
                id,
                frequency: self.frequencies[id],
            })
            .collect();
        serde_json::to_string_pretty(&entries).expect("vocab entries serialize")
    }

    pub fn from_json(json: &str) -> Result<Vocab> {
        let mut entries: Vec<VocabEntry> = serde_json::from_str(json)?;
        entries.sort_by_key(|e| e.id);
        let mut vocab = Vocab::reserved_only();
        for (pos, entry) in entries.into_iter().enumerate() {
            let expect = RESERVED + pos;
            if entry.id != expect {
                return Err(Error::Data(format!(
                    "vocabulary ids must be dense from {RESERVED}: found {} where {} expected",
                    entry.id, expect
                )));
            }
            if vocab.token_to_id.contains_key(&entry.token) {
                return Err(Error::Data(format!("duplicate vocabulary token {:?}", entry.token)));
            }
            vocab.token_to_id.insert(entry.token.clone(), entry.id);
            vocab.tokens.push(entry.token);
            vocab.frequencies.push(entry.frequency);
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<&'static str> {
        vec![
            "chest pain and cough",
            "chest pain resolved",
            "cough persists with pain",
        ]
    }

    #[test]
    fn min_freq_filters_singletons() {
        let v = Vocab::build(corpus(), 2);
        assert_ne!(v.id_of("pain"), UNK_ID);
        assert_ne!(v.id_of("chest"), UNK_ID);
        assert_ne!(v.id_of("cough"), UNK_ID);
        assert_eq!(v.id_of("resolved"), UNK_ID);
        assert_eq!(v.id_of("persists"), UNK_ID);
    }

    #[test]
    fn ids_ordered_by_frequency_then_token() {
        let v = Vocab::build(corpus(), 2);
        // pain x3, then chest x2 / cough x2 alphabetically
        assert_eq!(v.id_of("pain"), 3);
        assert_eq!(v.id_of("chest"), 4);
        assert_eq!(v.id_of("cough"), 5);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn reserved_ids_fixed() {
        let v = Vocab::build(corpus(), 2);
        assert_eq!(v.token_of(PAD_ID), Some("<pad>"));
        assert_eq!(v.token_of(UNK_ID), Some("<unk>"));
        assert_eq!(v.token_of(CLS_ID), Some("<cls>"));
    }

    #[test]
    fn encode_maps_unknowns_to_unk() {
        let v = Vocab::build(corpus(), 2);
        assert_eq!(v.encode("pain abracadabra chest"), vec![3, UNK_ID, 4]);
        assert_eq!(v.encode(""), Vec::<usize>::new());
    }

    #[test]
    fn json_round_trip() {
        let v = Vocab::build(corpus(), 2);
        let back = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(back.len(), v.len());
        for id in 0..v.len() {
            assert_eq!(back.token_of(id), v.token_of(id));
        }
        assert_eq!(back.frequencies, v.frequencies);
    }

    #[test]
    fn json_rejects_sparse_ids() {
        let json = r#"[{"token":"a","id":3,"frequency":5},{"token":"b","id":5,"frequency":4}]"#;
        assert!(Vocab::from_json(json).is_err());
    }
}
