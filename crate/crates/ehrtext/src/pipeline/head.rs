//! Downstream classification head: two linear layers 128 -> 64 -> 1 with a
//! ReLU between; the sigmoid is applied at prediction time, while training
//! uses the logit form of BCE for stability.

use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};
use crate::rng;
use crate::tabular::encoder::{linear, OUTPUT_DIM};
use std::collections::BTreeMap;

pub const HEAD_HIDDEN: usize = 64;

pub fn init_head_params<T: Real>(seed: u64, store: &mut ParamStore<T>) {
    let mut lin = |name: &str, fan_in: usize, fan_out: usize| {
        let std = T::from_f64((2.0 / (fan_in + fan_out) as f64).sqrt());
        let wname = format!("{name}.w");
        let mut r = rng::stream(seed, &format!("init:{wname}"));
        store.insert(&wname, Tensor::randn(&[fan_in, fan_out], std, &mut r));
        store.insert(&format!("{name}.b"), Tensor::zeros(&[fan_out]));
    };
    lin("head.lin0", OUTPUT_DIM, HEAD_HIDDEN);
    lin("head.lin1", HEAD_HIDDEN, 1);
}

/// Logits [n, 1] from encodings [n, 128].
pub fn head_logits<T: Real>(
    tape: &mut Tape<T>,
    vars: &BTreeMap<String, Var>,
    e: Var,
) -> Var {
    let h = linear(tape, vars, e, "head.lin0");
    let h = tape.relu(h);
    linear(tape, vars, h, "head.lin1")
}

/// Mean binary cross-entropy over the batch, computed on logits.
pub fn bce_mean<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[bool]) -> Var {
    let n = labels.len();
    let targets = Tensor::from_vec(
        &[n, 1],
        labels
            .iter()
            .map(|&y| if y { T::one() } else { T::zero() })
            .collect(),
    );
    let sum = tape.bce_with_logits_sum(logits, targets);
    tape.scale(sum, T::from_f64(1.0 / n as f64))
}
