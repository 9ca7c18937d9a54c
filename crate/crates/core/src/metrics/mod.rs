//! Evaluation metrics, grouped reports, leakage probes and projections.

pub mod classification;
pub mod grouped;
pub mod pca;
pub mod probe;
pub mod ranking;

pub use classification::{
    classification_metrics, confusion_counts, confusion_from_predictions, ClassMetrics,
    ConfusionCounts, DEFAULT_THRESHOLD,
};
pub use grouped::{evaluate_grouped, metric_set, EvalReport, GroupKey, GroupMetrics, MetricSet, ProbeSummary};
pub use pca::{pca_project_2d, Projection};
pub use probe::{bias_leakage_probe, ProbeConfig, ProbeResult};
pub use ranking::{average_precision, roc_auc};
