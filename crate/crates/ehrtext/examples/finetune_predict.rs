//! Fine-tunes a classification head on a pretrained tabular encoder, then
//! scores held-out rows and reports their AUROC.

use ehrtext::data::{generate_synthetic, make_split_plan, SplitCfg, SynthConfig};
use ehrtext::eval::auroc;
use ehrtext::pipeline::{predict, run_finetune, run_masked_pretrain, RunConfig, RunLog, Stage};

fn main() {
    let ds = generate_synthetic(&SynthConfig::standard(600, 13)).expect("valid config");
    let split = SplitCfg::scaled(ds.len(), 13).expect("split");
    let plan = make_split_plan(ds.len(), &split).expect("plan");
    let subset = &plan.subsets[0];
    let mut log = RunLog::in_memory();

    let mut mcfg = RunConfig::for_stage(Stage::Masked, 4);
    mcfg.epochs = 5;
    let masked = run_masked_pretrain(&mcfg, &ds, &plan.pretrain_pool, &mut log).expect("masked");

    let fcfg = RunConfig::for_stage(Stage::Finetune, 4);
    let out = run_finetune(&fcfg, &ds, &subset.train, &subset.val, &masked, "task_a", &mut log)
        .expect("finetune");
    println!(
        "best epoch {} with validation AUROC {:.4}",
        out.best_epoch, out.best_val_auc
    );

    let scores = predict(&out.checkpoint, &ds.subtable(&subset.test)).expect("predict");
    let labels = ds.labels_for("task_a").expect("task");
    let test_labels: Vec<bool> = subset.test.iter().map(|&r| labels[r]).collect();
    println!("test AUROC: {:.4}", auroc(&scores, &test_labels).expect("auroc"));

    println!("\nfirst five test rows:");
    for i in 0..5 {
        println!(
            "  {}: predicted {:.3}, actual {}",
            ds.ids[subset.test[i]],
            scores[i],
            test_labels[i] as u8
        );
    }
}
