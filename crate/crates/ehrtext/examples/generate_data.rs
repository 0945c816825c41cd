//! Generates a small synthetic paired dataset and prints what one pair
//! looks like: the tabular record, its note, and the label base rates.

use ehrtext::data::{generate_synthetic, SynthConfig};

fn main() {
    let cfg = SynthConfig::standard(300, 7);
    let ds = generate_synthetic(&cfg).expect("valid config");

    println!("{} pairs, {} feature columns", ds.len(), ds.table.columns.len());
    println!("columns: {}", ds.table.columns.join(", "));

    let row: Vec<&str> = ds.table.rows[0]
        .iter()
        .map(|c| c.as_str().unwrap_or("<missing>"))
        .collect();
    println!("\nrecord {}: {}", ds.ids[0], row.join(" | "));

    let note = ds.note_for(0);
    let preview: String = note.chars().take(400).collect();
    println!("\npaired note (first 400 chars):\n{}", preview);

    println!("\nlabel base rates:");
    for task in ds.task_names() {
        let labels = ds.labels_for(task).unwrap();
        let pos = labels.iter().filter(|&&b| b).count();
        println!("  {}: {:.3}", task, pos as f64 / labels.len() as f64);
    }
}
