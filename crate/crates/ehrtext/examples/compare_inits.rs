//! The headline experiment in miniature: fine-tune from a contrastively
//! aligned encoder versus a masked-only encoder on every subset, both
//! tasks, at full and half training data, and print the report table.

use ehrtext::data::{generate_synthetic, make_split_plan, SplitCfg, SynthConfig};
use ehrtext::eval::{run_comparison, ComparisonCfg};
use ehrtext::pipeline::RunLog;

fn main() {
    let ds = generate_synthetic(&SynthConfig::standard(800, 3)).expect("valid config");
    let split = SplitCfg::scaled(ds.len(), 3).expect("split");
    let plan = make_split_plan(ds.len(), &split).expect("plan");

    let mut cfg = ComparisonCfg::standard(3);
    cfg.masked.epochs = 4;
    cfg.contrastive.epochs = 4;
    cfg.contrastive.holdout = 40;
    cfg.finetune.epochs = 6;

    let mut log = RunLog::in_memory();
    let report = run_comparison(&cfg, &ds, &plan, &mut log).expect("comparison");
    println!("{}", report.to_text());

    for t in &report.tests {
        println!(
            "{} at fraction {}: {} vs {} gives t = {:.3}, p = {:.4}",
            t.task, t.fraction, t.variant_a, t.variant_b, t.t, t.p
        );
    }
}
