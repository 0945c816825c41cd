//! Chunk-level transformer encoder for notes.
//!
//! Each CLS-prefixed chunk runs through a pre-norm transformer (self
//! attention + GELU feed-forward per layer, final layer norm), and the note
//! vector t is the mean of the chunks' final CLS embeddings. Chunks carry no
//! padding, so attention covers every position.

use super::chunk::{NoteChunks, CHUNK_TOTAL};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};
use crate::rng;
use std::collections::BTreeMap;

pub const TEXT_DIM: usize = 768;
pub const TEXT_LAYERS: usize = 4;
pub const TEXT_HEADS: usize = 8;
pub const TEXT_FFN: usize = 1024;
pub const MAX_POS: usize = CHUNK_TOTAL;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub vocab_size: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_pos: usize,
}

impl TextEncoder {
    pub fn standard(vocab_size: usize) -> Self {
        TextEncoder {
            vocab_size,
            dim: TEXT_DIM,
            n_layers: TEXT_LAYERS,
            n_heads: TEXT_HEADS,
            ffn_dim: TEXT_FFN,
            max_pos: MAX_POS,
        }
    }

    /// Small profile for desk-scale contrastive runs: full chunk length,
    /// but a 64-wide single-layer stack instead of the 768-wide four-layer
    /// one. With one layer the proportional freeze plan freezes only the
    /// embeddings, so the whole attention stack stays trainable.
    pub fn compact(vocab_size: usize) -> Self {
        TextEncoder {
            vocab_size,
            dim: 64,
            n_layers: 1,
            n_heads: 4,
            ffn_dim: 128,
            max_pos: MAX_POS,
        }
    }

    /// Scaled-down configuration for gradient checks and fast tests.
    pub fn toy(vocab_size: usize, dim: usize, n_layers: usize, n_heads: usize) -> Self {
        assert_eq!(dim % n_heads, 0, "head count must divide dim");
        TextEncoder {
            vocab_size,
            dim,
            n_layers,
            n_heads,
            ffn_dim: dim + dim / 2,
            max_pos: 16,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    /// Inserts freshly initialized parameters under the `text.` prefix, one
    /// RNG stream per tensor so insertion order is irrelevant.
    pub fn init_params<T: Real>(&self, seed: u64, store: &mut ParamStore<T>) {
        let randn = |name: &str, shape: &[usize], std: f64, store: &mut ParamStore<T>| {
            let mut r = rng::stream(seed, &format!("init:{}", name));
            store.insert(name, Tensor::randn(shape, T::from_f64(std), &mut r));
        };
        randn("text.embed.tok", &[self.vocab_size, self.dim], 0.02, store);
        randn("text.embed.pos", &[self.max_pos, self.dim], 0.02, store);

        let linear = |name: String, fan_in: usize, fan_out: usize, store: &mut ParamStore<T>| {
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let mut r = rng::stream(seed, &format!("init:{}.w", name));
            store.insert(
                &format!("{}.w", name),
                Tensor::randn(&[fan_in, fan_out], T::from_f64(std), &mut r),
            );
            store.insert(&format!("{}.b", name), Tensor::zeros(&[fan_out]));
        };
        for li in 0..self.n_layers {
            for proj in ["wq", "wk", "wv", "wo"] {
                linear(format!("text.layer{}.attn.{}", li, proj), self.dim, self.dim, store);
            }
            linear(format!("text.layer{}.ffn.lin0", li), self.dim, self.ffn_dim, store);
            linear(format!("text.layer{}.ffn.lin1", li), self.ffn_dim, self.dim, store);
            for ln in ["ln0", "ln1"] {
                store.insert(
                    &format!("text.layer{}.{}.g", li, ln),
                    Tensor::filled(&[self.dim], T::one()),
                );
                store.insert(
                    &format!("text.layer{}.{}.b", li, ln),
                    Tensor::zeros(&[self.dim]),
                );
            }
        }
        store.insert("text.final_ln.g", Tensor::filled(&[self.dim], T::one()));
        store.insert("text.final_ln.b", Tensor::zeros(&[self.dim]));
    }

    /// Groups frozen during contrastive pretraining and fine-tuning: both
    /// embedding tables and the first half of the layer stack.
    pub fn frozen_prefixes(&self) -> Vec<String> {
        let mut out = vec!["text.embed.tok".to_string(), "text.embed.pos".to_string()];
        for li in 0..self.n_layers / 2 {
            out.push(format!("text.layer{}.", li));
        }
        out
    }

    /// Encodes one note: per-chunk transformer forward, CLS at position 0,
    /// mean over chunks in fixed chunk order. Output shape [1, dim].
    pub fn encode_note<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        chunks: &NoteChunks,
    ) -> Result<Var> {
        let mut cls_rows = Vec::with_capacity(chunks.len());
        for c in &chunks.chunks {
            cls_rows.push(self.encode_chunk(tape, vars, c)?);
        }
        let stacked = tape.concat_rows(&cls_rows);
        let t = tape.mean_rows(stacked);
        if !tape.value(t).is_finite() {
            return Err(Error::DivergedForward(
                "non-finite note embedding".to_string(),
            ));
        }
        Ok(t)
    }

    /// Encodes a batch of notes into [n, dim], one row per note.
    pub fn encode_batch<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        notes: &[NoteChunks],
    ) -> Result<Var> {
        let rows: Vec<Var> = notes
            .iter()
            .map(|nc| self.encode_note(tape, vars, nc))
            .collect::<Result<_>>()?;
        Ok(tape.concat_rows(&rows))
    }

    fn encode_chunk<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        ids: &[usize],
    ) -> Result<Var> {
        if ids.is_empty() || ids.len() > self.max_pos {
            return Err(Error::InvalidInput(format!(
                "chunk length {} outside 1..={}",
                ids.len(),
                self.max_pos
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {} outside vocabulary of {}",
                bad, self.vocab_size
            )));
        }
        let tok = tape.gather(vars["text.embed.tok"], ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.gather(vars["text.embed.pos"], &positions);
        let mut x = tape.add(tok, pos);
        for li in 0..self.n_layers {
            x = self.layer(tape, vars, x, li);
        }
        let g = vars["text.final_ln.g"];
        let b = vars["text.final_ln.b"];
        let x = tape.layer_norm(x, g, b, T::from_f64(LN_EPS));
        Ok(tape.slice_rows(x, 0, 1))
    }

    fn layer<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        x: Var,
        li: usize,
    ) -> Var {
        let eps = T::from_f64(LN_EPS);
        let g0 = vars[&format!("text.layer{}.ln0.g", li)];
        let b0 = vars[&format!("text.layer{}.ln0.b", li)];
        let normed = tape.layer_norm(x, g0, b0, eps);
        let (attn, _) = self.attention(tape, vars, normed, li);
        let x = tape.add(x, attn);

        let g1 = vars[&format!("text.layer{}.ln1.g", li)];
        let b1 = vars[&format!("text.layer{}.ln1.b", li)];
        let normed = tape.layer_norm(x, g1, b1, eps);
        let h = linear(tape, vars, normed, &format!("text.layer{}.ffn.lin0", li));
        let h = tape.gelu(h);
        let ffn = linear(tape, vars, h, &format!("text.layer{}.ffn.lin1", li));
        tape.add(x, ffn)
    }

    /// Multi-head self attention. Also returns the per-head attention
    /// probability matrices so tests can inspect them.
    pub(crate) fn attention<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        x: Var,
        li: usize,
    ) -> (Var, Vec<Var>) {
        let prefix = format!("text.layer{}.attn", li);
        let q = linear(tape, vars, x, &format!("{}.wq", prefix));
        let k = linear(tape, vars, x, &format!("{}.wk", prefix));
        let v = linear(tape, vars, x, &format!("{}.wv", prefix));
        let hd = self.head_dim();
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice_cols(q, h * hd, hd);
            let kh = tape.slice_cols(k, h * hd, hd);
            let vh = tape.slice_cols(v, h * hd, hd);
            let scores = tape.matmul_nt(qh, kh);
            let scaled = tape.scale(scores, scale);
            let p = tape.softmax_rows(scaled);
            probs.push(p);
            heads.push(tape.matmul(p, vh));
        }
        let cat = tape.concat_cols(&heads);
        (linear(tape, vars, cat, &format!("{}.wo", prefix)), probs)
    }
}

fn linear<T: Real>(
    tape: &mut Tape<T>,
    vars: &BTreeMap<String, Var>,
    x: Var,
    prefix: &str,
) -> Var {
    let w = vars[&format!("{}.w", prefix)];
    let b = vars[&format!("{}.b", prefix)];
    let h = tape.matmul(x, w);
    tape.add_row(h, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::chunk::chunk;

    fn toy() -> TextEncoder {
        TextEncoder::toy(23, 16, 2, 2)
    }

    fn leafed<T: Real>(
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
    ) -> BTreeMap<String, Var> {
        store.leaf_map(tape)
    }

    fn toy_note(ids: &[usize]) -> NoteChunks {
        NoteChunks {
            chunks: ids.chunks(7).map(|p| {
                let mut c = vec![crate::text::vocab::CLS_ID];
                c.extend_from_slice(p);
                c
            }).collect(),
        }
    }

    #[test]
    fn standard_output_dim_is_768() {
        let enc = TextEncoder::standard(40);
        let mut store: ParamStore<f32> = ParamStore::new();
        enc.init_params(3, &mut store);
        let mut tape = Tape::new();
        let vars = leafed(&store, &mut tape);
        let nc = chunk(&[5, 9, 12, 3]);
        let t = enc.encode_note(&mut tape, &vars, &nc).unwrap();
        assert_eq!(tape.value(t).shape, vec![1, 768]);
    }

    #[test]
    fn single_chunk_mean_is_identity_and_duplicate_invariant() {
        let enc = toy();
        let mut store: ParamStore<f64> = ParamStore::new();
        enc.init_params(11, &mut store);

        let one = NoteChunks { chunks: vec![vec![2, 5, 7, 9]] };
        let two = NoteChunks { chunks: vec![vec![2, 5, 7, 9], vec![2, 5, 7, 9]] };

        let mut tape = Tape::new();
        let vars = leafed(&store, &mut tape);
        let t1 = enc.encode_note(&mut tape, &vars, &one).unwrap();
        let t2 = enc.encode_note(&mut tape, &vars, &two).unwrap();
        let (v1, v2) = (tape.value(t1), tape.value(t2));
        for (a, b) in v1.data.iter().zip(&v2.data) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn chunk_order_does_not_change_note_vector() {
        let enc = toy();
        let mut store: ParamStore<f64> = ParamStore::new();
        enc.init_params(17, &mut store);

        let fwd = NoteChunks { chunks: vec![vec![2, 5, 7], vec![2, 9, 4, 6], vec![2, 3]] };
        let rev = NoteChunks { chunks: vec![vec![2, 3], vec![2, 5, 7], vec![2, 9, 4, 6]] };

        let mut tape = Tape::new();
        let vars = leafed(&store, &mut tape);
        let a = enc.encode_note(&mut tape, &vars, &fwd).unwrap();
        let b = enc.encode_note(&mut tape, &vars, &rev).unwrap();
        let (va, vb) = (tape.value(a), tape.value(b));
        for (x, y) in va.data.iter().zip(&vb.data) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn two_chunk_note_is_average_of_single_chunk_encodings() {
        let enc = toy();
        let mut store: ParamStore<f64> = ParamStore::new();
        enc.init_params(29, &mut store);

        let c1 = vec![2, 5, 7, 11];
        let c2 = vec![2, 9, 4];
        let mut tape = Tape::new();
        let vars = leafed(&store, &mut tape);
        let both = enc
            .encode_note(&mut tape, &vars, &NoteChunks { chunks: vec![c1.clone(), c2.clone()] })
            .unwrap();
        let a = enc
            .encode_note(&mut tape, &vars, &NoteChunks { chunks: vec![c1] })
            .unwrap();
        let b = enc
            .encode_note(&mut tape, &vars, &NoteChunks { chunks: vec![c2] })
            .unwrap();
        let (vb, va, vc) = (tape.value(both), tape.value(a), tape.value(b));
        for i in 0..vb.data.len() {
            let mean = 0.5 * (va.data[i] + vc.data[i]);
            assert!((vb.data[i] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let enc = toy();
        let mut store: ParamStore<f64> = ParamStore::new();
        enc.init_params(41, &mut store);
        let mut tape = Tape::new();
        let vars = leafed(&store, &mut tape);
        let ids = vec![2usize, 5, 7, 9, 11, 3];
        let tok = tape.gather(vars["text.embed.tok"], &ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.gather(vars["text.embed.pos"], &positions);
        let x = tape.add(tok, pos);
        let (_, probs) = enc.attention(&mut tape, &vars, x, 0);
        assert_eq!(probs.len(), 2);
        for p in probs {
            let pv = tape.value(p);
            for r in 0..pv.shape[0] {
                let s: f64 = pv.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
                assert!(pv.row(r).iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn batch_rows_match_individual_notes() {
        let enc = toy();
        let mut store: ParamStore<f64> = ParamStore::new();
        enc.init_params(5, &mut store);
        let notes = vec![toy_note(&[5, 7, 9, 11, 4, 6, 8, 10, 12]), toy_note(&[3, 4])];
        let mut tape = Tape::new();
        let vars = leafed(&store, &mut tape);
        let batch = enc.encode_batch(&mut tape, &vars, &notes).unwrap();
        let bv = tape.value(batch).clone();
        assert_eq!(bv.shape, vec![2, 16]);
        for (i, nc) in notes.iter().enumerate() {
            let t = enc.encode_note(&mut tape, &vars, nc).unwrap();
            for (a, b) in bv.row(i).iter().zip(&tape.value(t).data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oversized_chunk_and_bad_token_are_rejected() {
        let enc = toy();
        let mut store: ParamStore<f64> = ParamStore::new();
        enc.init_params(5, &mut store);
        let mut tape = Tape::new();
        let vars = leafed(&store, &mut tape);
        let long = NoteChunks { chunks: vec![(0..17).map(|_| 3usize).collect()] };
        assert!(enc.encode_note(&mut tape, &vars, &long).is_err());
        let bad = NoteChunks { chunks: vec![vec![2, 99]] };
        assert!(enc.encode_note(&mut tape, &vars, &bad).is_err());
    }

    #[test]
    fn poisoned_embedding_reports_divergence() {
        let enc = toy();
        let mut store: ParamStore<f64> = ParamStore::new();
        enc.init_params(5, &mut store);
        store.get_mut("text.embed.tok").data[20] = f64::NAN;
        let mut tape = Tape::new();
        let vars = leafed(&store, &mut tape);
        let nc = NoteChunks { chunks: vec![vec![2, 1, 3]] };
        match enc.encode_note(&mut tape, &vars, &nc) {
            Err(Error::DivergedForward(_)) => {}
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn frozen_prefixes_cover_embeddings_and_early_layers() {
        let enc = TextEncoder::standard(50);
        let fp = enc.frozen_prefixes();
        assert!(fp.contains(&"text.embed.tok".to_string()));
        assert!(fp.contains(&"text.embed.pos".to_string()));
        assert!(fp.contains(&"text.layer0.".to_string()));
        assert!(fp.contains(&"text.layer1.".to_string()));
        assert!(!fp.iter().any(|p| p.starts_with("text.layer2")));
        assert!(!fp.iter().any(|p| p.starts_with("text.layer3")));
    }

    #[test]
    fn encoder_gradcheck_on_toy_config() {
        use crate::numerics::gradcheck;

        let enc = toy();
        let mut store: ParamStore<f64> = ParamStore::new();
        enc.init_params(7, &mut store);
        let note = NoteChunks { chunks: vec![vec![2, 5, 7, 9, 11, 3, 4, 6], vec![2, 8, 10, 12]] };

        let checked = [
            "text.embed.tok",
            "text.layer0.attn.wq.w",
            "text.layer0.attn.wo.b",
            "text.layer1.ffn.lin0.w",
            "text.layer1.ln0.g",
            "text.final_ln.b",
        ];
        let inputs: Vec<Tensor<f64>> = checked.iter().map(|n| store.get(n).clone()).collect();
        let err = gradcheck::max_rel_error(&inputs, gradcheck::DEFAULT_STEP, |tape, vs| {
            let mut vars = BTreeMap::new();
            for (name, tensor) in store.iter() {
                if let Some(pos) = checked.iter().position(|c| c == name) {
                    vars.insert(name.clone(), vs[pos]);
                } else {
                    vars.insert(name.clone(), tape.constant(tensor.clone()));
                }
            }
            let t = enc.encode_note(tape, &vars, &note).unwrap();
            let shape = tape.value(t).shape.clone();
            tape.mse_masked_sum(t, Tensor::zeros(&shape), Tensor::filled(&shape, 1.0))
        });
        assert!(err < 1e-5, "text encoder gradcheck error {}", err);
    }
}
