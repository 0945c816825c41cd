//! End-to-end initialization comparison: masked-only warm starts versus
//! contrastively aligned warm starts, fine-tuned per subset and scored on
//! held-out test rows.

use crate::data::{PairedDataset, SplitPlan};
use crate::error::{Error, Result};
use crate::eval::auroc::auroc;
use crate::eval::report::Report;
use crate::pipeline::config::{RunConfig, Stage};
use crate::pipeline::logging::RunLog;
use crate::pipeline::stages::{predict, run_contrastive_pretrain, run_finetune, run_masked_pretrain};
use crate::rng;

pub const VARIANT_CL: &str = "cl-init";
pub const VARIANT_MASKED: &str = "masked-init";

/// Stage configurations for one full comparison run.
#[derive(Debug, Clone)]
pub struct ComparisonCfg {
    pub masked: RunConfig,
    pub contrastive: RunConfig,
    pub finetune: RunConfig,
    /// Fractions of each subset's training split to fine-tune on, e.g.
    /// `[1.0, 0.5]` for the data-efficiency sweep.
    pub fractions: Vec<f64>,
}

impl ComparisonCfg {
    pub fn standard(seed: u64) -> Self {
        ComparisonCfg {
            masked: RunConfig::for_stage(Stage::Masked, seed),
            contrastive: RunConfig::for_stage(Stage::Contrastive, seed),
            finetune: RunConfig::for_stage(Stage::Finetune, seed),
            fractions: vec![1.0, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.masked.validate()?;
        self.contrastive.validate()?;
        self.finetune.validate()?;
        if self.fractions.is_empty() {
            return Err(Error::Config("at least one training fraction is required".into()));
        }
        for &f in &self.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "training fraction must be in (0,1], got {}",
                    f
                )));
            }
        }
        Ok(())
    }
}

/// First `round(fraction * n)` entries, at least one. The split plan already
/// dealt rows from a single shuffle, so a prefix is an unbiased subsample.
pub fn take_fraction(rows: &[usize], fraction: f64) -> Vec<usize> {
    let k = ((rows.len() as f64 * fraction).round() as usize).clamp(1, rows.len());
    rows[..k].to_vec()
}

/// Runs both pretraining stages on the pool, then fine-tunes every
/// (task, subset, fraction, init) combination and collects test AUROCs into
/// a report with one Welch test per task and fraction. Any undefined AUC
/// aborts the run rather than being dropped.
pub fn run_comparison(
    cfg: &ComparisonCfg,
    ds: &PairedDataset,
    plan: &SplitPlan,
    log: &mut RunLog,
) -> Result<Report> {
    cfg.validate()?;
    plan.validate(ds.len())?;

    let masked = run_masked_pretrain(&cfg.masked, ds, &plan.pretrain_pool, log)?;
    let contrastive = run_contrastive_pretrain(&cfg.contrastive, ds, &plan.pretrain_pool, &masked, log)?;

    let mut report = Report::default();
    let tasks: Vec<String> = ds.task_names().iter().map(|s| s.to_string()).collect();
    for task in &tasks {
        let labels = ds.labels_for(task)?;
        for &fraction in &cfg.fractions {
            for (variant, init) in [(VARIANT_MASKED, &masked), (VARIANT_CL, &contrastive)] {
                let mut aucs = Vec::with_capacity(plan.subsets.len());
                for (s, subset) in plan.subsets.iter().enumerate() {
                    let mut ft = cfg.finetune.clone();
                    ft.seed = rng::derive_seed(cfg.finetune.seed, &format!("subset:{}", s));
                    let train = take_fraction(&subset.train, fraction);
                    let out = run_finetune(&ft, ds, &train, &subset.val, init, task, log)?;
                    let scores = predict(&out.checkpoint, &ds.subtable(&subset.test))?;
                    let test_labels: Vec<bool> =
                        subset.test.iter().map(|&r| labels[r]).collect();
                    aucs.push(auroc(&scores, &test_labels)?);
                }
                report.add_row(task, variant, fraction, aucs)?;
            }
            report.add_test(task, VARIANT_CL, VARIANT_MASKED, fraction)?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, make_split_plan, SplitCfg, SynthConfig};

    fn tiny_cfg(seed: u64) -> ComparisonCfg {
        let mut cfg = ComparisonCfg::standard(seed);
        cfg.masked.epochs = 1;
        cfg.contrastive.epochs = 1;
        cfg.contrastive.holdout = 8;
        cfg.finetune.epochs = 1;
        cfg
    }

    fn tiny_dataset() -> (PairedDataset, SplitPlan) {
        let mut scfg = SynthConfig::standard(150, 17);
        scfg.n_num = 6;
        scfg.n_informative_num = 4;
        scfg.cat_cardinalities = vec![3, 2];
        scfg.words_per_note = (20, 40);
        let ds = generate_synthetic(&scfg).unwrap();
        let split = SplitCfg {
            n_subsets: 2,
            train_val: 40,
            test: 15,
            val_fraction: 0.25,
            seed: 5,
        };
        let plan = make_split_plan(ds.len(), &split).unwrap();
        (ds, plan)
    }

    #[test]
    fn comparison_produces_full_report() {
        let (ds, plan) = tiny_dataset();
        let cfg = tiny_cfg(9);
        let mut log = RunLog::in_memory();
        let report = run_comparison(&cfg, &ds, &plan, &mut log).unwrap();

        assert_eq!(report.rows.len(), 2 * 2 * 2, "tasks x fractions x variants");
        assert_eq!(report.tests.len(), 2 * 2, "tasks x fractions");
        for row in &report.rows {
            assert_eq!(row.aucs.len(), plan.subsets.len());
            assert!(row.aucs.iter().all(|a| (0.0..=1.0).contains(a)));
        }
        for t in &report.tests {
            assert!((0.0..=1.0).contains(&t.p));
            assert_eq!(t.variant_a, VARIANT_CL);
        }
        assert!(!log.for_stage("masked").is_empty());
        assert!(!log.for_stage("contrastive").is_empty());
        assert!(!log.for_stage("finetune").is_empty());
    }

    #[test]
    fn comparison_is_deterministic() {
        let (ds, plan) = tiny_dataset();
        let cfg = tiny_cfg(9);
        let mut la = RunLog::in_memory();
        let mut lb = RunLog::in_memory();
        let a = run_comparison(&cfg, &ds, &plan, &mut la).unwrap();
        let b = run_comparison(&cfg, &ds, &plan, &mut lb).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn bad_fraction_is_rejected() {
        let mut cfg = tiny_cfg(1);
        cfg.fractions = vec![0.0];
        assert!(cfg.validate().is_err());
        cfg.fractions = vec![1.5];
        assert!(cfg.validate().is_err());
        cfg.fractions = vec![];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fraction_prefix_rounds_and_clamps() {
        let rows: Vec<usize> = (10..20).collect();
        assert_eq!(take_fraction(&rows, 1.0).len(), 10);
        assert_eq!(take_fraction(&rows, 0.5), (10..15).collect::<Vec<_>>());
        assert_eq!(take_fraction(&rows, 0.04).len(), 1);
        assert_eq!(take_fraction(&rows, 0.55).len(), 6);
    }
}
