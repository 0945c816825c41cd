//! Demonstrates that sharding one contrastive batch across worker threads
//! reproduces the single-process gradients. The loss couples every pair in
//! the batch, so only the encoder passes shard; the loss itself is computed
//! centrally and each shard backpropagates from its embedding gradient.

use ehrtext::align::init_projections;
use ehrtext::data::{generate_synthetic, SynthConfig};
use ehrtext::numerics::ParamStore;
use ehrtext::pipeline::clip_batch_grads;
use ehrtext::tabular::{build_schema, encode_rows, TabEncoder, OUTPUT_DIM};
use ehrtext::text::{chunk, clean_note, NoteChunks, TextEncoder, Vocab};

fn main() {
    let mut cfg = SynthConfig::standard(24, 31);
    cfg.n_num = 6;
    cfg.words_per_note = (20, 40);
    let ds = generate_synthetic(&cfg).expect("valid config");

    let schema = build_schema(&ds.table, &[]).expect("schema");
    let tab = TabEncoder::from_schema(&schema);
    let batch = encode_rows(&schema, &ds.table).expect("encode");
    let cleaned: Vec<String> = (0..ds.len()).map(|i| clean_note(ds.note_for(i))).collect();
    let vocab = Vocab::build(cleaned.iter().map(|s| s.as_str()), 1);
    let text = TextEncoder::compact(vocab.len());
    let notes: Vec<NoteChunks> = cleaned.iter().map(|s| chunk(&vocab.encode(s))).collect();

    let mut store: ParamStore<f64> = ParamStore::new();
    tab.init_params(8, &mut store);
    text.init_params(8, &mut store);
    init_projections(text.dim, OUTPUT_DIM, 8, &mut store);

    let (loss1, g1) = clip_batch_grads(1, &tab, &text, &store, &batch, &notes, 0.1).expect("width 1");
    let (loss4, g4) = clip_batch_grads(4, &tab, &text, &store, &batch, &notes, 0.1).expect("width 4");

    let mut worst = 0.0f64;
    for (name, a) in &g1 {
        let b = &g4[name];
        for (x, y) in a.data.iter().zip(&b.data) {
            worst = worst.max((x - y).abs() / x.abs().max(1.0));
        }
    }
    println!("loss width 1: {:.12}", loss1);
    println!("loss width 4: {:.12}", loss4);
    println!("{} gradient tensors, worst relative difference {:.2e}", g1.len(), worst);
}
