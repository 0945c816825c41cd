//! Metrics, statistics, and result reporting.

pub mod auroc;
pub mod comparison;
pub mod report;
pub mod stats;

pub use auroc::{auroc, auroc_bruteforce};
pub use comparison::{run_comparison, take_fraction, ComparisonCfg, VARIANT_CL, VARIANT_MASKED};
pub use report::{PairTest, Report, ReportRow};
pub use stats::{aggregate, format_mean_std, welch_ttest, Welch};
