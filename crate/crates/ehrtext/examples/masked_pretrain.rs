//! Masked-feature pretraining on a synthetic pool, printing the per-epoch
//! reconstruction loss and the checkpoint digest twice to show determinism.

use ehrtext::data::{generate_synthetic, SynthConfig};
use ehrtext::pipeline::{run_masked_pretrain, RunConfig, RunLog, Stage};

fn main() {
    let ds = generate_synthetic(&SynthConfig::standard(400, 5)).expect("valid config");
    let pool: Vec<usize> = (0..ds.len()).collect();

    let mut cfg = RunConfig::for_stage(Stage::Masked, 21);
    cfg.epochs = 5;

    let mut log = RunLog::in_memory();
    let ckpt = run_masked_pretrain(&cfg, &ds, &pool, &mut log).expect("pretrain");
    for r in log.for_stage("masked") {
        println!("epoch {}: reconstruction loss {:.4}", r.epoch, r.loss);
    }

    let digest = ckpt.digest().expect("digest");
    let mut log2 = RunLog::in_memory();
    let again = run_masked_pretrain(&cfg, &ds, &pool, &mut log2).expect("pretrain");
    println!("\ncheckpoint digest: {}", digest);
    println!("rerun digest:      {}", again.digest().expect("digest"));
    assert_eq!(digest, again.digest().unwrap());
}
