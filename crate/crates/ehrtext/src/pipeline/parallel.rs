//! Data-parallel contrastive step.
//!
//! The contrastive loss couples every pair in the batch, so the batch
//! cannot simply be split into independent sub-losses. Instead the
//! encoders (which are row-separable) run sharded: each shard forwards its
//! rows on its own tape, a central tape consumes the concatenated
//! embeddings through projection and loss, and each shard then backprops
//! from the gradient the central tape assigned to its embedding slice.
//! Gradients merge in fixed shard order, so the result equals the
//! single-tape gradient exactly, up to float summation order.

use crate::align::{clip_loss, project};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};
use crate::tabular::encoder::TabEncoder;
use crate::tabular::schema::TabularBatch;
use crate::text::{NoteChunks, TextEncoder};
use std::collections::BTreeMap;

struct ShardForward<T: Real> {
    tape: Tape<T>,
    vars: BTreeMap<String, Var>,
    e: Var,
    t: Var,
}

fn shard_bounds(n: usize, width: usize) -> Vec<(usize, usize)> {
    (0..width)
        .map(|i| (i * n / width, (i + 1) * n / width))
        .filter(|(a, b)| a < b)
        .collect()
}

fn forward_shard<T: Real>(
    tab_enc: &TabEncoder,
    text_enc: &TextEncoder,
    store: &ParamStore<T>,
    batch: &TabularBatch,
    notes: &[NoteChunks],
    rows: (usize, usize),
) -> Result<ShardForward<T>> {
    let idx: Vec<usize> = (rows.0..rows.1).collect();
    let sub = batch.select(&idx);
    let mut tape = Tape::new();
    let vars = store.leaf_map(&mut tape);
    let e = tab_enc.forward(&mut tape, &vars, &sub)?;
    let t = text_enc.encode_batch(&mut tape, &vars, &notes[rows.0..rows.1])?;
    Ok(ShardForward { tape, vars, e, t })
}

/// Loss and parameter gradients for one contrastive batch, computed with
/// `width` parallel encoder shards. Width 1 is the single-process
/// reference path.
pub fn clip_batch_grads<T: Real>(
    width: usize,
    tab_enc: &TabEncoder,
    text_enc: &TextEncoder,
    store: &ParamStore<T>,
    batch: &TabularBatch,
    notes: &[NoteChunks],
    tau: f64,
) -> Result<(f64, BTreeMap<String, Tensor<T>>)> {
    let n = batch.n_rows;
    if notes.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} notes",
            n,
            notes.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput(
            "contrastive batch needs at least 2 pairs".to_string(),
        ));
    }
    if width == 0 {
        return Err(Error::Config("data-parallel width must be >= 1".to_string()));
    }
    let bounds = shard_bounds(n, width.min(n));

    let shards: Vec<ShardForward<T>> = if bounds.len() == 1 {
        vec![forward_shard(tab_enc, text_enc, store, batch, notes, bounds[0])?]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = bounds
                .iter()
                .map(|&rows| {
                    scope.spawn(move || {
                        forward_shard(tab_enc, text_enc, store, batch, notes, rows)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("shard forward panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    };

    // central tape: concatenated embeddings -> projection -> loss
    let mut ctape: Tape<T> = Tape::new();
    let cvars = store.leaf_map(&mut ctape);
    let e_leaves: Vec<Var> = shards
        .iter()
        .map(|sh| ctape.leaf(sh.tape.value(sh.e).clone()))
        .collect();
    let t_leaves: Vec<Var> = shards
        .iter()
        .map(|sh| ctape.leaf(sh.tape.value(sh.t).clone()))
        .collect();
    let e_cat = ctape.concat_rows(&e_leaves);
    let t_cat = ctape.concat_rows(&t_leaves);
    let (ze, zt) = project(&mut ctape, &cvars, e_cat, t_cat)?;
    let loss = clip_loss(&mut ctape, ze, zt, tau)?;
    let loss_value = ctape.value(loss).data[0].as_f64();
    let mut cgrads = ctape.backward(loss);
    let mut merged = store.grad_map(&cvars, &mut cgrads);

    let seeds: Vec<(Tensor<T>, Tensor<T>)> = shards
        .iter()
        .enumerate()
        .map(|(i, sh)| {
            let de = cgrads
                .take(e_leaves[i])
                .unwrap_or_else(|| Tensor::zeros(&sh.tape.value(sh.e).shape));
            let dt = cgrads
                .take(t_leaves[i])
                .unwrap_or_else(|| Tensor::zeros(&sh.tape.value(sh.t).shape));
            (de, dt)
        })
        .collect();

    let shard_maps: Vec<BTreeMap<String, Tensor<T>>> = if shards.len() == 1 {
        let sh = &shards[0];
        let (de, dt) = seeds.into_iter().next().expect("one shard");
        let mut g = sh.tape.backward_seeded(vec![(sh.e, de), (sh.t, dt)]);
        vec![store.grad_map(&sh.vars, &mut g)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = shards
                .iter()
                .zip(seeds)
                .map(|(sh, (de, dt))| {
                    scope.spawn(move || {
                        let mut g = sh.tape.backward_seeded(vec![(sh.e, de), (sh.t, dt)]);
                        store.grad_map(&sh.vars, &mut g)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("shard backward panicked"))
                .collect()
        })
    };

    for smap in shard_maps {
        for (name, g) in smap {
            let acc = merged
                .get_mut(&name)
                .expect("shard and central grad maps share keys");
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += *b;
            }
        }
    }
    Ok((loss_value, merged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::schema::{build_schema, encode_rows, Cell, RawTable};
    use crate::text::{chunk, Vocab};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn fixture(
        n: usize,
        seed: u64,
    ) -> (TabEncoder, TextEncoder, ParamStore<f64>, TabularBatch, Vec<NoteChunks>) {
        let mut r = ChaCha12Rng::seed_from_u64(seed);
        let columns: Vec<String> = (0..3).map(|i| format!("n{i}")).chain(["c".to_string()]).collect();
        let rows: Vec<Vec<Cell>> = (0..n)
            .map(|_| {
                let mut row: Vec<Cell> = (0..3)
                    .map(|_| Cell::Value(format!("{:.4}", r.gen_range(-2.0..2.0))))
                    .collect();
                row.push(Cell::Value(
                    ["x", "y", "z"][r.gen_range(0..3)].to_string(),
                ));
                row
            })
            .collect();
        let table = RawTable { columns, rows };
        let schema = build_schema(&table, &[]).unwrap();
        let batch = encode_rows(&schema, &table).unwrap();
        let tab_enc = TabEncoder::from_schema(&schema);

        let words = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"];
        let docs: Vec<String> = (0..n)
            .map(|_| {
                (0..r.gen_range(4..9))
                    .map(|_| words[r.gen_range(0..words.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let vocab = Vocab::build(docs.iter().map(|s| s.as_str()), 1);
        let text_enc = TextEncoder::toy(vocab.len(), 16, 2, 2);
        let notes: Vec<NoteChunks> = docs.iter().map(|d| chunk(&vocab.encode(d))).collect();

        let mut store: ParamStore<f64> = ParamStore::new();
        tab_enc.init_params(seed, &mut store);
        text_enc.init_params(seed, &mut store);
        crate::align::init_projections(text_enc.dim, crate::tabular::encoder::OUTPUT_DIM, seed, &mut store);
        (tab_enc, text_enc, store, batch, notes)
    }

    #[test]
    fn width_four_matches_single_process() {
        for seed in [1u64, 2, 3] {
            let (tab_enc, text_enc, store, batch, notes) = fixture(10, seed);
            let (l1, g1) =
                clip_batch_grads(1, &tab_enc, &text_enc, &store, &batch, &notes, 0.1).unwrap();
            let (l4, g4) =
                clip_batch_grads(4, &tab_enc, &text_enc, &store, &batch, &notes, 0.1).unwrap();
            assert!((l1 - l4).abs() <= 1e-9 * l1.abs().max(1.0), "{l1} vs {l4}");
            assert_eq!(
                g1.keys().collect::<Vec<_>>(),
                g4.keys().collect::<Vec<_>>()
            );
            for (name, a) in &g1 {
                let b = &g4[name];
                for (x, y) in a.data.iter().zip(&b.data) {
                    let rel = (x - y).abs() / x.abs().max(1.0);
                    assert!(rel < 1e-9, "{name}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let (tab_enc, text_enc, mut store, batch, notes) = fixture(6, 4);
        store.freeze_prefix("tabular.embed.");
        store.freeze_prefix("text.embed.tok");
        let (_, grads) =
            clip_batch_grads(2, &tab_enc, &text_enc, &store, &batch, &notes, 0.1).unwrap();
        assert!(grads.keys().all(|k| !k.starts_with("tabular.embed.")));
        assert!(!grads.contains_key("text.embed.tok"));
        assert!(grads.contains_key("align.proj_ehr.w"));
        assert!(grads.contains_key("align.proj_text.w"));
    }

    #[test]
    fn degenerate_batches_rejected() {
        let (tab_enc, text_enc, store, batch, notes) = fixture(6, 5);
        let one = batch.select(&[0]);
        assert!(clip_batch_grads(1, &tab_enc, &text_enc, &store, &one, &notes[..1], 0.1).is_err());
        assert!(
            clip_batch_grads(0, &tab_enc, &text_enc, &store, &batch, &notes, 0.1).is_err()
        );
        assert!(clip_batch_grads(2, &tab_enc, &text_enc, &store, &batch, &notes[..3], 0.1)
            .is_err());
    }

    #[test]
    fn width_beyond_rows_is_clamped() {
        let (tab_enc, text_enc, store, batch, notes) = fixture(3, 6);
        let (l1, g1) =
            clip_batch_grads(1, &tab_enc, &text_enc, &store, &batch, &notes, 0.1).unwrap();
        let (l8, g8) =
            clip_batch_grads(8, &tab_enc, &text_enc, &store, &batch, &notes, 0.1).unwrap();
        assert!((l1 - l8).abs() < 1e-9);
        for (name, a) in &g1 {
            let b = &g8[name];
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() / x.abs().max(1.0) < 1e-9, "{name}");
            }
        }
    }
}
