//! Paired record/note dataset shared by generation, ingestion, and training.

use crate::error::{Error, Result};
use crate::tabular::schema::RawTable;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

/// Records, notes, and labels with an explicit pairing: record i belongs
/// with note `pairing[i]`. Generation and ingestion produce the identity
/// pairing; controls may permute it.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub ids: Vec<String>,
    pub table: RawTable,
    pub notes: Vec<String>,
    /// task name -> one binary label per pair
    pub labels: BTreeMap<String, Vec<bool>>,
    pub pairing: Vec<usize>,
    pub provenance: Provenance,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Copies the listed rows into a standalone table, preserving order.
    pub fn subtable(&self, rows: &[usize]) -> RawTable {
        RawTable {
            columns: self.table.columns.clone(),
            rows: rows.iter().map(|&r| self.table.rows[r].clone()).collect(),
        }
    }

    pub fn note_for(&self, row: usize) -> &str {
        &self.notes[self.pairing[row]]
    }

    pub fn task_names(&self) -> Vec<&str> {
        self.labels.keys().map(|s| s.as_str()).collect()
    }

    pub fn labels_for(&self, task: &str) -> Result<&[bool]> {
        self.labels
            .get(task)
            .map(|v| v.as_slice())
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown task {:?}; dataset has {:?}",
                    task,
                    self.labels.keys().collect::<Vec<_>>()
                ))
            })
    }

    /// Checks the structural invariants: equal lengths and a bijective
    /// pairing.
    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        if self.table.rows.len() != n || self.notes.len() != n || self.pairing.len() != n {
            return Err(Error::Data(format!(
                "count mismatch: {} ids, {} rows, {} notes, {} pairing entries",
                n,
                self.table.rows.len(),
                self.notes.len(),
                self.pairing.len()
            )));
        }
        for (task, ls) in &self.labels {
            if ls.len() != n {
                return Err(Error::Data(format!(
                    "task {:?} has {} labels for {} pairs",
                    task,
                    ls.len(),
                    n
                )));
            }
        }
        let mut seen = vec![false; n];
        for &p in &self.pairing {
            if p >= n || seen[p] {
                return Err(Error::Data("pairing is not a bijection".to_string()));
            }
            seen[p] = true;
        }
        Ok(())
    }

    /// Returns a copy whose record-to-note pairing is shuffled; used as the
    /// no-signal control in alignment experiments.
    pub fn with_permuted_pairing(&self, seed: u64) -> PairedDataset {
        use rand::seq::SliceRandom;
        let mut perm = self.pairing.clone();
        let mut r = crate::rng::stream(seed, "permute-pairing");
        perm.shuffle(&mut r);
        PairedDataset {
            pairing: perm,
            ..self.clone()
        }
    }
}
