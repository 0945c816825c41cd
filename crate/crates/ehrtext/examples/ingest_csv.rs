//! Loads a paired dataset from a CSV of records and a JSONL of notes,
//! joined on an id column. Rows without a note (and notes without a row)
//! are dropped and counted.

use ehrtext::data::ingest;
use std::fs;

fn main() {
    let dir = std::env::temp_dir().join(format!("ehrtext_ingest_demo_{}", std::process::id()));
    fs::create_dir_all(&dir).expect("temp dir");
    let csv = dir.join("records.csv");
    let notes = dir.join("notes.jsonl");

    fs::write(
        &csv,
        "id,age,bp,smoker,outcome\n\
         p1,64,120,yes,1\n\
         p2,57,135,no,0\n\
         p3,71,,no,1\n\
         p4,49,118,yes,0\n",
    )
    .expect("write csv");
    fs::write(
        &notes,
        r#"{"id": "p1", "text": "Summary: stable, mild hypertension."}
{"id": "p2", "text": "Summary: routine follow-up, no complaints."}
{"id": "p3", "text": "Summary: fatigue and elevated readings."}
{"id": "zz", "text": "orphan note with no matching record"}
"#,
    )
    .expect("write notes");

    let labels = vec!["outcome".to_string()];
    let (ds, report) = ingest(&csv, &notes, "id", &labels).expect("ingest");

    println!("{}", report);
    println!("{} pairs joined; feature columns: {}", ds.len(), ds.table.columns.join(", "));
    for i in 0..ds.len() {
        let outcome = ds.labels_for("outcome").unwrap()[i];
        println!("  {} -> label {}, note: {}", ds.ids[i], outcome as u8, ds.note_for(i));
    }

    fs::remove_dir_all(&dir).ok();
}
