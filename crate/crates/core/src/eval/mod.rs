//! Confusion metrics, ROC/AUC, repeat aggregation, the KNN baseline and
//! feature / score exports.

mod export;
mod knn;
mod metrics;
mod repeat;

pub use export::{export_features, read_scores, scores_for, write_scores};
pub use knn::{knn_baseline, knn_scores, pair_features};
pub use metrics::{
    compute_metrics, confusion, evaluate_scores, roc_auc, write_roc_tsv, ConfusionCounts, Metric, MetricsReport, Roc,
    RocPoint, Shown, THRESHOLD,
};
pub use repeat::{format_summary, repeat_evaluate, write_metrics_tsv, MetricSummary, RepeatSummary};
