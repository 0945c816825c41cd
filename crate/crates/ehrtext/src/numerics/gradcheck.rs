//! Finite-difference gradient verification.
//!
//! Runs in `f64` with central differences. Every differentiable building
//! block gets checked against this before it is trusted in training code.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares analytic gradients of a scalar-valued function against central
/// differences and returns the worst relative error over all input elements.
///
/// `f` rebuilds the computation on a fresh tape from leaf variables each time
/// it is called, so it must be a pure function of its inputs.
pub fn max_rel_error<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars);
        assert_eq!(tape.value(loss).len(), 1, "gradcheck needs a scalar loss");
        tape.value(loss).data[0]
    };

    // analytic pass
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss);

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(|t| t.data.clone())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        for j in 0..input.len() {
            let orig = work[i].data[j];
            work[i].data[j] = orig + h;
            let up = eval(&work);
            work[i].data[j] = orig - h;
            let down = eval(&work);
            work[i].data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[j].abs().max(1.0);
            let rel = (analytic[j] - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

/// Asserts the gradcheck passes at the given tolerance.
pub fn assert_grads_close<F>(inputs: &[Tensor<f64>], tol: f64, f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let err = max_rel_error(inputs, DEFAULT_STEP, f);
    assert!(err < tol, "gradcheck failed: max relative error {}", err);
}
