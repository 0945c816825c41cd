//! Attentive tabular encoder.
//!
//! Sequential decision steps over an embedded feature vector. Each step asks
//! an attentive transformer (linear then sparsemax) where to look, masks the
//! features, runs them through GLU feature transformers (two blocks shared
//! across steps, two per step), and contributes ReLU(decision) to the output
//! aggregate. A relaxation prior discourages re-attending the same features.
//! No batch-level statistics anywhere: rows are processed independently, so
//! row order and batch composition cannot change a row's encoding.

use super::schema::{FeatureSchema, TabularBatch};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};
use crate::rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;

pub const OUTPUT_DIM: usize = 128;
pub const N_D: usize = 64;
pub const N_A: usize = 64;
pub const N_STEPS: usize = 3;
pub const GAMMA: f64 = 1.3;
const GLU_WIDTH: usize = N_D + N_A;
const RESIDUAL_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Embedding width for a categorical column with `seen` known categories.
pub fn embed_dim(seen: usize) -> usize {
    std::cmp::min(8, seen.div_ceil(2)).max(1)
}

/// Static shape information derived from a schema.
#[derive(Debug, Clone)]
pub struct TabEncoder {
    /// (column name, table rows = seen + 1 unknown, embedding dim)
    pub cat_cols: Vec<(String, usize, usize)>,
    pub n_num: usize,
    /// embedded feature width the masks range over
    pub d_feat: usize,
}

/// Forward outputs kept for inspection: the encoding plus each step's raw
/// sparsemax mask (before prior scaling).
pub struct TabForward {
    pub e: Var,
    pub raw_masks: Vec<Var>,
}

impl TabEncoder {
    pub fn from_schema(schema: &FeatureSchema) -> Self {
        let cat_cols: Vec<(String, usize, usize)> = schema
            .categorical_columns()
            .map(|c| {
                let seen = c.vocabulary.len();
                (c.name.clone(), seen + 1, embed_dim(seen))
            })
            .collect();
        let n_num = schema.num_numerical();
        let d_feat = n_num + cat_cols.iter().map(|(_, _, d)| d).sum::<usize>();
        TabEncoder {
            cat_cols,
            n_num,
            d_feat,
        }
    }

    /// Inserts freshly initialized parameters, all under the `tabular.`
    /// prefix. Every tensor gets its own RNG stream derived from its name, so
    /// initialization is independent of insertion order.
    pub fn init_params<T: Real>(&self, seed: u64, store: &mut ParamStore<T>) {
        for (name, rows, dim) in &self.cat_cols {
            let full = format!("tabular.embed.{}", name);
            let mut r = init_rng(seed, &full);
            store.insert(&full, Tensor::randn(&[*rows, *dim], T::from_f64(0.5), &mut r));
        }
        let linear = |name: String, fan_in: usize, fan_out: usize, store: &mut ParamStore<T>| {
            let std = T::from_f64((2.0 / (fan_in + fan_out) as f64).sqrt());
            let wname = format!("{}.w", name);
            let mut r = init_rng(seed, &wname);
            store.insert(&wname, Tensor::randn(&[fan_in, fan_out], std, &mut r));
            store.insert(&format!("{}.b", name), Tensor::zeros(&[fan_out]));
        };
        linear("tabular.shared.glu0".into(), self.d_feat, 2 * GLU_WIDTH, store);
        linear("tabular.shared.glu1".into(), GLU_WIDTH, 2 * GLU_WIDTH, store);
        for s in 0..=N_STEPS {
            linear(format!("tabular.step{}.glu0", s), GLU_WIDTH, 2 * GLU_WIDTH, store);
            linear(format!("tabular.step{}.glu1", s), GLU_WIDTH, 2 * GLU_WIDTH, store);
        }
        for s in 1..=N_STEPS {
            linear(format!("tabular.att{}", s), N_A, self.d_feat, store);
        }
        linear("tabular.final".into(), N_D, OUTPUT_DIM, store);
    }

    /// Parameter groups frozen once masked pretraining is done: the
    /// embeddings and the initial feature-splitting block (the first shared
    /// GLU block, which every step's transform enters through).
    pub fn frozen_prefixes() -> Vec<&'static str> {
        vec!["tabular.embed.", "tabular.shared.glu0."]
    }

    /// Builds the embedded feature matrix f for a batch: categorical
    /// embeddings in schema order, then standardized numericals.
    fn features<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        batch: &TabularBatch,
    ) -> Var {
        assert_eq!(batch.n_cat, self.cat_cols.len(), "batch/schema mismatch");
        assert_eq!(batch.n_num, self.n_num, "batch/schema mismatch");
        let mut parts = Vec::with_capacity(self.cat_cols.len() + 1);
        for (ci, (name, rows, _)) in self.cat_cols.iter().enumerate() {
            let indices = batch.cat_column(ci);
            debug_assert!(indices.iter().all(|&i| i < *rows));
            let table = vars[&format!("tabular.embed.{}", name)];
            parts.push(tape.gather(table, &indices));
        }
        if self.n_num > 0 {
            let data: Vec<T> = batch.num.iter().map(|&x| T::from_f64(x)).collect();
            let num = Tensor::from_vec(&[batch.n_rows, self.n_num], data);
            parts.push(tape.constant(num));
        }
        tape.concat_cols(&parts)
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        batch: &TabularBatch,
    ) -> Result<Var> {
        Ok(self.forward_full(tape, vars, batch)?.e)
    }

    pub fn forward_full<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        batch: &TabularBatch,
    ) -> Result<TabForward> {
        let b = batch.n_rows;
        let f = self.features(tape, vars, batch);

        // initial feature split: no mask, just the transform stack
        let x0 = feature_transform(tape, vars, f, 0);
        check_finite(tape, x0, "initial split")?;
        let mut a = tape.slice_cols(x0, N_D, N_A);

        let mut prior = tape.constant(Tensor::filled(&[b, self.d_feat], T::one()));
        let mut raw_masks = Vec::with_capacity(N_STEPS);
        let mut d_agg: Option<Var> = None;

        for s in 1..=N_STEPS {
            let logits = linear(tape, vars, a, &format!("tabular.att{}", s));
            let raw = tape.sparsemax_rows(logits);
            raw_masks.push(raw);
            let applied = tape.mul(raw, prior);
            let relax = tape.affine(raw, T::from_f64(-1.0), T::from_f64(GAMMA));
            prior = tape.mul(prior, relax);

            let masked = tape.mul(f, applied);
            let x = feature_transform(tape, vars, masked, s);
            check_finite(tape, x, &format!("decision step {}", s))?;

            let d = tape.slice_cols(x, 0, N_D);
            let rd = tape.relu(d);
            d_agg = Some(match d_agg {
                None => rd,
                Some(acc) => tape.add(acc, rd),
            });
            a = tape.slice_cols(x, N_D, N_A);
        }

        let e = linear(tape, vars, d_agg.unwrap(), "tabular.final");
        check_finite(tape, e, "output projection")?;
        debug_assert_eq!(tape.value(e).shape, vec![b, OUTPUT_DIM]);
        Ok(TabForward { e, raw_masks })
    }
}

fn init_rng(seed: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(rng::derive_seed(seed, &format!("init:{}", name)))
}

pub(crate) fn linear<T: Real>(
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

/// One GLU block: linear to twice the width, gate the first half with the
/// sigmoid of the second. Residual blocks add the input and rescale so
/// variance stays level through the stack.
fn glu_block<T: Real>(
    tape: &mut Tape<T>,
    vars: &BTreeMap<String, Var>,
    x: Var,
    prefix: &str,
    residual: bool,
) -> Var {
    let h = linear(tape, vars, x, prefix);
    let a = tape.slice_cols(h, 0, GLU_WIDTH);
    let g = tape.slice_cols(h, GLU_WIDTH, GLU_WIDTH);
    let gate = tape.sigmoid(g);
    let y = tape.mul(a, gate);
    if residual {
        let sum = tape.add(y, x);
        tape.scale(sum, T::from_f64(RESIDUAL_SCALE))
    } else {
        y
    }
}

fn feature_transform<T: Real>(
    tape: &mut Tape<T>,
    vars: &BTreeMap<String, Var>,
    input: Var,
    step: usize,
) -> Var {
    let mut x = glu_block(tape, vars, input, "tabular.shared.glu0", false);
    x = glu_block(tape, vars, x, "tabular.shared.glu1", true);
    x = glu_block(tape, vars, x, &format!("tabular.step{}.glu0", step), true);
    glu_block(tape, vars, x, &format!("tabular.step{}.glu1", step), true)
}

fn check_finite<T: Real>(tape: &Tape<T>, v: Var, where_: &str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::DivergedForward(format!(
            "non-finite activations at {}",
            where_
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::schema::{build_schema, encode_rows, Cell, RawTable};

    fn cell(s: &str) -> Cell {
        Cell::Value(s.to_string())
    }

    pub(crate) fn toy_schema_and_batch() -> (FeatureSchema, TabularBatch) {
        let table = RawTable {
            columns: vec!["color".into(), "grade".into(), "x1".into(), "x2".into()],
            rows: vec![
                vec![cell("red"), cell("a"), cell("1.0"), cell("-0.5")],
                vec![cell("blue"), cell("b"), cell("2.0"), cell("0.5")],
                vec![cell("green"), cell("a"), cell("3.0"), cell("1.5")],
                vec![cell("red"), cell("c"), cell("4.0"), cell("2.5")],
            ],
        };
        let schema = build_schema(&table, &[]).unwrap();
        let batch = encode_rows(&schema, &table).unwrap();
        (schema, batch)
    }

    #[test]
    fn embed_dim_rule() {
        assert_eq!(embed_dim(1), 1);
        assert_eq!(embed_dim(2), 1);
        assert_eq!(embed_dim(3), 2);
        assert_eq!(embed_dim(16), 8);
        assert_eq!(embed_dim(100), 8);
    }

    #[test]
    fn output_is_128_and_deterministic() {
        let (schema, batch) = toy_schema_and_batch();
        let enc = TabEncoder::from_schema(&schema);
        let mut store: ParamStore<f32> = ParamStore::new();
        enc.init_params(7, &mut store);

        let run = || {
            let mut tape = Tape::new();
            let vars = store.leaf_map(&mut tape);
            let e = enc.forward(&mut tape, &vars, &batch).unwrap();
            tape.value(e).data.clone()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 4 * OUTPUT_DIM);
        let abits: Vec<u32> = a.iter().map(|x| x.to_bits()).collect();
        let bbits: Vec<u32> = b.iter().map(|x| x.to_bits()).collect();
        assert_eq!(abits, bbits);
    }

    #[test]
    fn init_is_insertion_order_independent() {
        let (schema, _) = toy_schema_and_batch();
        let enc = TabEncoder::from_schema(&schema);
        let mut s1: ParamStore<f64> = ParamStore::new();
        enc.init_params(11, &mut s1);
        let mut s2: ParamStore<f64> = ParamStore::new();
        enc.init_params(11, &mut s2);
        for (name, t) in s1.iter() {
            assert_eq!(t.data, s2.get(name).data, "{} differs", name);
        }
    }

    #[test]
    fn row_permutation_permutes_output() {
        let (schema, batch) = toy_schema_and_batch();
        let enc = TabEncoder::from_schema(&schema);
        let mut store: ParamStore<f64> = ParamStore::new();
        enc.init_params(3, &mut store);

        let mut tape = Tape::new();
        let vars = store.leaf_map(&mut tape);
        let e_full = enc.forward(&mut tape, &vars, &batch).unwrap();
        let full = tape.value(e_full).clone();

        let perm = [3usize, 1, 0, 2];
        let permuted = batch.select(&perm);
        let mut tape2 = Tape::new();
        let vars2 = store.leaf_map(&mut tape2);
        let e_perm = enc.forward(&mut tape2, &vars2, &permuted).unwrap();
        let got = tape2.value(e_perm).clone();

        for (out_row, &src) in perm.iter().enumerate() {
            assert_eq!(got.row(out_row), full.row(src), "row {}", out_row);
        }
    }

    #[test]
    fn raw_masks_live_on_the_simplex() {
        let (schema, batch) = toy_schema_and_batch();
        let enc = TabEncoder::from_schema(&schema);
        let mut store: ParamStore<f64> = ParamStore::new();
        enc.init_params(19, &mut store);

        let mut tape = Tape::new();
        let vars = store.leaf_map(&mut tape);
        let fw = enc.forward_full(&mut tape, &vars, &batch).unwrap();
        assert_eq!(fw.raw_masks.len(), N_STEPS);
        for mask in &fw.raw_masks {
            let m = tape.value(*mask);
            for r in 0..m.shape[0] {
                let row = m.row(r);
                assert!(row.iter().all(|&x| x >= 0.0));
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6, "mask row sums to {}", sum);
            }
        }
    }

    #[test]
    fn unknown_only_row_is_finite() {
        let (schema, _) = toy_schema_and_batch();
        let enc = TabEncoder::from_schema(&schema);
        let mut store: ParamStore<f32> = ParamStore::new();
        enc.init_params(5, &mut store);

        let batch = TabularBatch {
            n_rows: 1,
            cat: vec![0, 0],
            n_cat: 2,
            num: vec![0.0, 0.0],
            n_num: 2,
            labels: None,
        };
        let mut tape = Tape::new();
        let vars = store.leaf_map(&mut tape);
        let e = enc.forward(&mut tape, &vars, &batch).unwrap();
        assert!(tape.value(e).is_finite());
    }

    #[test]
    fn encoder_gradcheck_on_toy_schema() {
        use crate::numerics::gradcheck;

        let (schema, batch) = toy_schema_and_batch();
        let enc = TabEncoder::from_schema(&schema);
        let mut store: ParamStore<f64> = ParamStore::new();
        enc.init_params(23, &mut store);

        // a representative parameter from every group kind; biases stand in
        // for the larger weight matrices to keep the element count sane
        let checked = [
            "tabular.embed.color",
            "tabular.shared.glu0.w",
            "tabular.step1.glu1.b",
            "tabular.att2.w",
            "tabular.final.b",
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
            let e = enc.forward(tape, &vars, &batch).unwrap();
            let shape = tape.value(e).shape.clone();
            tape.mse_masked_sum(e, Tensor::zeros(&shape), Tensor::filled(&shape, 1.0))
        });
        assert!(err < 1e-5, "encoder gradcheck error {}", err);
    }
}
