//! Shows the tabular encoder's attentive feature selection: per-step
//! sparsemax masks over feature columns. Unlike softmax attention, the
//! simplex projection drives many entries to exact zero as training
//! sharpens the logits.

use ehrtext::data::{generate_synthetic, SynthConfig};
use ehrtext::numerics::{ParamStore, Tape};
use ehrtext::tabular::{build_schema, encode_rows, TabEncoder};

fn main() {
    let mut cfg = SynthConfig::standard(64, 3);
    cfg.n_num = 8;
    cfg.n_informative_num = 3;
    let ds = generate_synthetic(&cfg).expect("valid config");

    let schema = build_schema(&ds.table, &[]).expect("schema");
    let enc = TabEncoder::from_schema(&schema);
    let batch = encode_rows(&schema, &ds.table).expect("encode");

    let mut store: ParamStore<f64> = ParamStore::new();
    enc.init_params(11, &mut store);
    let mut tape: Tape<f64> = Tape::new();
    let vars = store.leaf_map(&mut tape);
    let fwd = enc.forward_full(&mut tape, &vars, &batch).expect("forward");

    let e = tape.value(fwd.e);
    println!("embedding shape: {:?}", e.shape);

    for (step, &mask) in fwd.raw_masks.iter().enumerate() {
        let m = tape.value(mask);
        let cols = m.shape[1];
        let zeros = m.data.iter().filter(|&&v| v == 0.0).count();
        let mut col_mass = vec![0.0f64; cols];
        for (i, &v) in m.data.iter().enumerate() {
            col_mass[i % cols] += v;
        }
        let top = col_mass
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        println!(
            "step {}: {:.1}% of mask entries are exact zeros; heaviest feature index {} ({:.2} total mass)",
            step,
            100.0 * zeros as f64 / m.data.len() as f64,
            top.0,
            top.1
        );
    }
}
