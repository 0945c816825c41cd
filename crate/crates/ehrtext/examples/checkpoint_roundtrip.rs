//! Saves a checkpoint, reloads it, and verifies the round trip is bitwise:
//! same digest, same tensors, same optimizer state. Also shows the
//! integrity check rejecting a corrupted file.

use ehrtext::data::{generate_synthetic, SynthConfig};
use ehrtext::pipeline::{
    load_checkpoint, run_masked_pretrain, save_checkpoint, RunConfig, RunLog, Stage,
};
use std::fs;

fn main() {
    let ds = generate_synthetic(&SynthConfig::standard(120, 1)).expect("valid config");
    let pool: Vec<usize> = (0..ds.len()).collect();
    let mut cfg = RunConfig::for_stage(Stage::Masked, 5);
    cfg.epochs = 1;
    let mut log = RunLog::in_memory();
    let ckpt = run_masked_pretrain(&cfg, &ds, &pool, &mut log).expect("pretrain");

    let dir = std::env::temp_dir().join(format!("ehrtext_ckpt_demo_{}", std::process::id()));
    fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("checkpoint-masked.bin");

    let digest = save_checkpoint(&ckpt, &path).expect("save");
    let loaded = load_checkpoint(&path).expect("load");
    println!("saved digest:  {}", digest);
    println!("loaded digest: {}", loaded.digest().expect("digest"));
    println!(
        "{} tensors, optimizer step {}",
        loaded.params.names().count(),
        loaded.opt_t
    );
    assert_eq!(digest, loaded.digest().unwrap());

    let mut bytes = fs::read(&path).expect("read");
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    fs::write(&path, &bytes).expect("write");
    match load_checkpoint(&path) {
        Err(e) => println!("corrupted file rejected: {}", e),
        Ok(_) => panic!("corruption must not load"),
    }

    fs::remove_dir_all(&dir).ok();
}
