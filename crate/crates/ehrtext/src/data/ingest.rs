//! File ingestion: an RFC-4180 CSV of tabular features and labels joined
//! against a JSONL notes file ({"id", "text"}) on a key column. Inner
//! join: records without a note and notes without a record are dropped and
//! counted, never silently.

use crate::error::{Error, Result};
use crate::tabular::schema::{Cell, RawTable};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::types::{PairedDataset, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// CSV rows dropped because no note carried their key
    pub rows_dropped: usize,
    /// notes dropped because no CSV row carried their id
    pub notes_dropped: usize,
}

impl std::fmt::Display for IngestReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} rows dropped (no note), {} notes dropped (no row)",
            self.rows_dropped, self.notes_dropped
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NoteRecord {
    id: String,
    text: String,
}

fn parse_label(raw: &str, column: &str, row: usize) -> Result<bool> {
    match raw.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::Data(format!(
            "label column {column:?} row {row}: cannot parse {other:?} as binary"
        ))),
    }
}

/// Inner-joins a CSV of features (plus `label_columns`) with a JSONL notes
/// file on `join_key`. Feature columns keep their CSV order; empty cells
/// become missing values.
pub fn ingest(
    csv_path: &Path,
    notes_path: &Path,
    join_key: &str,
    label_columns: &[String],
) -> Result<(PairedDataset, IngestReport)> {
    let mut reader = csv::Reader::from_path(csv_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", csv_path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad CSV header: {e}")))?
        .iter()
        .map(|s| s.to_string())
        .collect();

    let key_idx = headers.iter().position(|h| h == join_key).ok_or_else(|| {
        Error::Data(format!(
            "join key column {join_key:?} not found; columns are {headers:?}"
        ))
    })?;
    let mut label_idx = Vec::with_capacity(label_columns.len());
    for name in label_columns {
        let idx = headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!(
                "label column {name:?} not found; columns are {headers:?}"
            ))
        })?;
        if idx == key_idx {
            return Err(Error::Data(format!(
                "column {name:?} cannot be both join key and label"
            )));
        }
        label_idx.push(idx);
    }
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|i| *i != key_idx && !label_idx.contains(i))
        .collect();

    let mut keys: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let mut raw_labels: Vec<Vec<bool>> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut duplicates = BTreeSet::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("CSV row {row_no}: {e}")))?;
        let key = record
            .get(key_idx)
            .unwrap_or("")
            .trim()
            .to_string();
        if key.is_empty() {
            return Err(Error::Data(format!("CSV row {row_no}: empty join key")));
        }
        if !seen.insert(key.clone()) {
            duplicates.insert(key.clone());
        }
        let cells = feature_idx
            .iter()
            .map(|&i| {
                let v = record.get(i).unwrap_or("");
                if v.is_empty() {
                    Cell::Missing
                } else {
                    Cell::Value(v.to_string())
                }
            })
            .collect();
        let labels = label_idx
            .iter()
            .zip(label_columns)
            .map(|(&i, name)| parse_label(record.get(i).unwrap_or(""), name, row_no))
            .collect::<Result<Vec<bool>>>()?;
        keys.push(key);
        rows.push(cells);
        raw_labels.push(labels);
    }
    if !duplicates.is_empty() {
        return Err(Error::Data(format!(
            "duplicate join keys in CSV: {:?}",
            duplicates.into_iter().collect::<Vec<_>>()
        )));
    }

    let notes_file = std::fs::File::open(notes_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", notes_path.display())))?;
    let mut notes_by_id: BTreeMap<String, String> = BTreeMap::new();
    for (line_no, line) in BufReader::new(notes_file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NoteRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("notes line {line_no}: {e}")))?;
        if notes_by_id.insert(rec.id.clone(), rec.text).is_some() {
            return Err(Error::Data(format!(
                "duplicate note id {:?} in notes file",
                rec.id
            )));
        }
    }

    let mut ids = Vec::new();
    let mut kept_rows = Vec::new();
    let mut notes = Vec::new();
    let mut kept_labels: Vec<Vec<bool>> = Vec::new();
    let mut rows_dropped = 0;
    for ((key, row), labels) in keys.iter().zip(rows).zip(raw_labels) {
        match notes_by_id.remove(key) {
            Some(text) => {
                ids.push(key.clone());
                kept_rows.push(row);
                notes.push(text);
                kept_labels.push(labels);
            }
            None => rows_dropped += 1,
        }
    }
    let notes_dropped = notes_by_id.len();
    if ids.is_empty() {
        return Err(Error::Data(format!(
            "join on {join_key:?} produced no pairs ({rows_dropped} rows and {notes_dropped} notes unmatched)"
        )));
    }

    let mut labels: BTreeMap<String, Vec<bool>> = label_columns
        .iter()
        .map(|n| (n.clone(), Vec::with_capacity(ids.len())))
        .collect();
    for per_row in kept_labels {
        for (name, value) in label_columns.iter().zip(per_row) {
            labels.get_mut(name).expect("registered").push(value);
        }
    }

    let n = ids.len();
    let ds = PairedDataset {
        ids,
        table: RawTable {
            columns: feature_idx.iter().map(|&i| headers[i].clone()).collect(),
            rows: kept_rows,
        },
        notes,
        labels,
        pairing: (0..n).collect(),
        provenance: Provenance::Ingested,
    };
    ds.validate()?;
    log::info!(
        "ingested {} pairs; {rows_dropped} rows dropped, {notes_dropped} notes dropped",
        ds.len()
    );
    Ok((ds, IngestReport { rows_dropped, notes_dropped }))
}

/// Writes a dataset back to the CSV + JSONL layout `ingest` reads. The
/// note written for each record is the one its pairing points at, so a
/// permuted pairing is resolved rather than preserved.
pub fn write_dataset(
    ds: &PairedDataset,
    csv_path: &Path,
    notes_path: &Path,
    join_key: &str,
) -> Result<()> {
    ds.validate()?;
    if ds.table.columns.iter().any(|c| c == join_key) {
        return Err(Error::Data(format!(
            "join key {join_key:?} collides with a feature column"
        )));
    }
    let mut writer = csv::Writer::from_path(csv_path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", csv_path.display())))?;
    let task_names: Vec<&String> = ds.labels.keys().collect();
    let mut header: Vec<&str> = vec![join_key];
    header.extend(ds.table.columns.iter().map(|s| s.as_str()));
    header.extend(task_names.iter().map(|s| s.as_str()));
    writer
        .write_record(&header)
        .map_err(|e| Error::Data(format!("CSV write: {e}")))?;
    for (i, row) in ds.table.rows.iter().enumerate() {
        let mut record: Vec<String> = vec![ds.ids[i].clone()];
        record.extend(row.iter().map(|c| match c {
            Cell::Missing => String::new(),
            Cell::Value(v) => v.clone(),
        }));
        for name in &task_names {
            record.push(if ds.labels[*name][i] { "1" } else { "0" }.to_string());
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Data(format!("CSV write: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Data(format!("CSV write: {e}")))?;

    let mut notes_file = std::fs::File::create(notes_path)?;
    for i in 0..ds.len() {
        let rec = NoteRecord {
            id: ds.ids[i].clone(),
            text: ds.note_for(i).to_string(),
        };
        writeln!(notes_file, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic, SynthConfig};
    use std::fs;
    use std::path::PathBuf;

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("ehrtext_ingest_{}_{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn synthetic_round_trip_is_field_equal() {
        let dir = scratch("round_trip");
        let csv = dir.join("table.csv");
        let notes = dir.join("notes.jsonl");
        let mut cfg = SynthConfig::standard(40, 17);
        cfg.words_per_note = (10, 20);
        let ds = generate_synthetic(&cfg).unwrap();
        write_dataset(&ds, &csv, &notes, "pair_id").unwrap();
        let labels: Vec<String> = ds.labels.keys().cloned().collect();
        let (back, report) = ingest(&csv, &notes, "pair_id", &labels).unwrap();
        assert_eq!(report, IngestReport { rows_dropped: 0, notes_dropped: 0 });
        assert_eq!(back.ids, ds.ids);
        assert_eq!(back.table, ds.table);
        assert_eq!(back.notes, ds.notes);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.pairing, ds.pairing);
        assert_eq!(back.provenance, Provenance::Ingested);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn unmatched_rows_and_notes_are_counted() {
        let dir = scratch("drops");
        let csv = dir.join("t.csv");
        let notes = dir.join("n.jsonl");
        let mut table = String::from("id,age,outcome\n");
        for i in 0..10 {
            table.push_str(&format!("p{i},{},{}\n", 30 + i, i % 2));
        }
        fs::write(&csv, table).unwrap();
        let mut lines = String::new();
        for i in 0..7 {
            lines.push_str(&format!("{{\"id\":\"p{i}\",\"text\":\"note {i}\"}}\n"));
        }
        lines.push_str("{\"id\":\"stranger\",\"text\":\"no row\"}\n");
        fs::write(&notes, lines).unwrap();
        let (ds, report) =
            ingest(&csv, &notes, "id", &["outcome".to_string()]).unwrap();
        assert_eq!(ds.len(), 7);
        assert_eq!(report.rows_dropped, 3);
        assert_eq!(report.notes_dropped, 1);
        assert_eq!(ds.table.columns, vec!["age".to_string()]);
        assert_eq!(ds.labels["outcome"].len(), 7);
        assert_eq!(report.to_string(), "3 rows dropped (no note), 1 notes dropped (no row)");
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn duplicate_key_lists_the_key() {
        let dir = scratch("dupe");
        let csv = dir.join("t.csv");
        let notes = dir.join("n.jsonl");
        fs::write(&csv, "id,x\na,1\nb,2\na,3\n").unwrap();
        fs::write(&notes, "{\"id\":\"a\",\"text\":\"t\"}\n").unwrap();
        let err = ingest(&csv, &notes, "id", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate join keys"), "{msg}");
        assert!(msg.contains("\"a\""), "{msg}");
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn empty_join_errors() {
        let dir = scratch("empty");
        let csv = dir.join("t.csv");
        let notes = dir.join("n.jsonl");
        fs::write(&csv, "id,x\na,1\n").unwrap();
        fs::write(&notes, "").unwrap();
        let err = ingest(&csv, &notes, "id", &[]).unwrap_err();
        assert!(err.to_string().contains("no pairs"), "{err}");
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn missing_columns_are_named() {
        let dir = scratch("cols");
        let csv = dir.join("t.csv");
        let notes = dir.join("n.jsonl");
        fs::write(&csv, "id,x\na,1\n").unwrap();
        fs::write(&notes, "{\"id\":\"a\",\"text\":\"t\"}\n").unwrap();
        let err = ingest(&csv, &notes, "key", &[]).unwrap_err();
        assert!(err.to_string().contains("\"key\""), "{err}");
        let err = ingest(&csv, &notes, "id", &["y".to_string()]).unwrap_err();
        assert!(err.to_string().contains("\"y\""), "{err}");
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn bad_label_cell_errors() {
        let dir = scratch("label");
        let csv = dir.join("t.csv");
        let notes = dir.join("n.jsonl");
        fs::write(&csv, "id,x,y\na,1,maybe\n").unwrap();
        fs::write(&notes, "{\"id\":\"a\",\"text\":\"t\"}\n").unwrap();
        let err = ingest(&csv, &notes, "id", &["y".to_string()]).unwrap_err();
        assert!(err.to_string().contains("maybe"), "{err}");
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn empty_cells_become_missing() {
        let dir = scratch("missing");
        let csv = dir.join("t.csv");
        let notes = dir.join("n.jsonl");
        fs::write(&csv, "id,x,y\na,,5\nb,2,6\n").unwrap();
        fs::write(
            &notes,
            "{\"id\":\"a\",\"text\":\"t\"}\n{\"id\":\"b\",\"text\":\"u\"}\n",
        )
        .unwrap();
        let (ds, _) = ingest(&csv, &notes, "id", &[]).unwrap();
        assert_eq!(ds.table.rows[0][0], Cell::Missing);
        assert_eq!(ds.table.rows[1][0], Cell::Value("2".to_string()));
        fs::remove_dir_all(dir).unwrap();
    }
}
