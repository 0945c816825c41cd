//! Result tables: per-variant seed aggregates and pairwise tests.

use super::stats::{aggregate, format_mean_std, welch_ttest, Welch};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub variant: String,
    pub fraction: f64,
    pub aucs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairTest {
    pub task: String,
    pub variant_a: String,
    pub variant_b: String,
    pub fraction: f64,
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub tests: Vec<PairTest>,
}

impl Report {
    pub fn add_row(
        &mut self,
        task: &str,
        variant: &str,
        fraction: f64,
        aucs: Vec<f64>,
    ) -> Result<()> {
        if let Some(bad) = aucs.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidInput(format!("AUC {} outside [0,1]", bad)));
        }
        let (mean, std) = aggregate(&aucs)?;
        let lo = aucs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = aucs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        debug_assert!(mean >= lo && mean <= hi);
        self.rows.push(ReportRow {
            task: task.to_string(),
            variant: variant.to_string(),
            fraction,
            aucs,
            mean,
            std,
        });
        self.rows.sort_by(|a, b| {
            (&a.task, &a.variant)
                .cmp(&(&b.task, &b.variant))
                .then(a.fraction.partial_cmp(&b.fraction).expect("finite fraction"))
        });
        Ok(())
    }

    /// Welch test between two variants' seed AUCs at one task and fraction.
    pub fn add_test(&mut self, task: &str, variant_a: &str, variant_b: &str, fraction: f64) -> Result<Welch> {
        let find = |v: &str| -> Result<&ReportRow> {
            self.rows
                .iter()
                .find(|r| r.task == task && r.variant == v && r.fraction == fraction)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("no row for {task}/{v}/{fraction}"))
                })
        };
        let a = find(variant_a)?.aucs.clone();
        let b = find(variant_b)?.aucs.clone();
        let w = welch_ttest(&a, &b)?;
        self.tests.push(PairTest {
            task: task.to_string(),
            variant_a: variant_a.to_string(),
            variant_b: variant_b.to_string(),
            fraction,
            t: w.t,
            p: w.p,
            df: w.df,
        });
        Ok(w)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["task", "variant", "fraction", "mean", "std", "aucs"])
            .map_err(Error::from)?;
        for r in &self.rows {
            let aucs = r
                .aucs
                .iter()
                .map(|a| format!("{:.6}", a))
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                r.task.as_str(),
                r.variant.as_str(),
                &format!("{}", r.fraction),
                &format!("{:.6}", r.mean),
                &format!("{:.6}", r.std),
                &aucs,
            ])
            .map_err(Error::from)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }

    /// Pretty table, one block per task: variants down the side, training
    /// fractions across the top, cells in "mean (±std)" form.
    pub fn to_text(&self) -> String {
        let tasks: BTreeSet<&str> = self.rows.iter().map(|r| r.task.as_str()).collect();
        let mut out = String::new();
        for task in tasks {
            let mut fractions: Vec<f64> = self
                .rows
                .iter()
                .filter(|r| r.task == task)
                .map(|r| r.fraction)
                .collect();
            fractions.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
            fractions.dedup();
            let variants: BTreeSet<&str> = self
                .rows
                .iter()
                .filter(|r| r.task == task)
                .map(|r| r.variant.as_str())
                .collect();

            out.push_str(&format!("Task: {}\n", task));
            let width = 24;
            out.push_str(&format!("{:width$}", "model"));
            for f in &fractions {
                out.push_str(&format!("{:>width$}", format!("{:.0}% train", f * 100.0)));
            }
            out.push('\n');
            for v in variants {
                out.push_str(&format!("{:width$}", v));
                for f in &fractions {
                    let cell = self
                        .rows
                        .iter()
                        .find(|r| r.task == task && r.variant == v && r.fraction == *f)
                        .map(|r| format_mean_std(r.mean, r.std))
                        .unwrap_or_else(|| "-".to_string());
                    out.push_str(&format!("{:>width$}", cell));
                }
                out.push('\n');
            }
            for t in self.tests.iter().filter(|t| t.task == task) {
                out.push_str(&format!(
                    "  {} vs {} at {:.0}%: t = {:.4}, p = {:.4}\n",
                    t.variant_a,
                    t.variant_b,
                    t.fraction * 100.0,
                    t.t,
                    t.p
                ));
            }
            out.push('\n');
        }
        out
    }

    pub fn tests_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.tests).map_err(Error::from)
    }
}
