//! Evaluation: attack and utility metrics, stealth diagnostics and the
//! posterior-noise defenses.

mod defense;
mod metrics;
mod report;

pub use defense::{apply_defense, DefenseKind, DefenseSetting};
pub use metrics::{accuracy, auc, auc_cus, average_precision, precision_at, precision_metrics, Similarity};
pub use report::{full_report, MetricReport, ReportInputs};
