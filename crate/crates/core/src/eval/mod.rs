//! Metrics, confusion analysis, agreement, and run comparison.

mod compare;
mod metrics;

pub use compare::{compare_runs, mean_std, split_fingerprint, Comparison, ComparisonRow};
pub use metrics::{class_error_rates, cohens_kappa, f1_score, ClassMetrics, ConfusionMatrix, EvalReport};
