//! Threshold-swept ROC curves, the five AUC scalars and score summaries.

mod roc;
mod stats;

pub use roc::{auc_suite, composite_metrics, roc_curves, roc_report, RocCurves, RocReport};
pub use stats::{five_number, separability_stats, FiveNumber, SeparabilityStats};
