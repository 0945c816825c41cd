//! Runs the finite-difference gradient checker against a few composite
//! losses. Relative errors well under 1e-5 mean the tape's analytic
//! gradients agree with central differences.

use ehrtext::align::clip_loss;
use ehrtext::numerics::gradcheck::{max_rel_error, DEFAULT_STEP};
use ehrtext::numerics::Tensor;
use ehrtext::pipeline::bce_mean;
use ehrtext::rng;

fn main() {
    let mut r = rng::stream(42, "gradcheck-demo");

    let z_e = Tensor::randn(&[4, 8], 1.0, &mut r);
    let z_t = Tensor::randn(&[4, 8], 1.0, &mut r);
    let err = max_rel_error(&[z_e, z_t], DEFAULT_STEP, |tape, vars| {
        clip_loss(tape, vars[0], vars[1], 0.1).expect("clip loss")
    });
    println!("clip loss on 4x8 embeddings: max relative error {:.2e}", err);

    let logits = Tensor::randn(&[6, 1], 2.0, &mut r);
    let labels = [true, false, true, true, false, false];
    let err = max_rel_error(&[logits], DEFAULT_STEP, |tape, vars| {
        bce_mean(tape, vars[0], &labels)
    });
    println!("bce on 6 logits:             max relative error {:.2e}", err);

    let x = Tensor::randn(&[3, 5], 1.0, &mut r);
    let err = max_rel_error(&[x], DEFAULT_STEP, |tape, vars| {
        let s = tape.sparsemax_rows(vars[0]);
        let target = Tensor::zeros(&[3, 5]);
        let mask = Tensor::from_vec(&[3, 5], vec![1.0; 15]);
        tape.mse_masked_sum(s, target, mask)
    });
    println!("sparsemax rows (3x5):        max relative error {:.2e}", err);
}
