//! Metrics, diagnosis reports, worklist triage simulation and the consensus
//! ablation harness.

mod ablation;
mod metrics;
mod triage;

pub use ablation::{
    ablation_datasets, ablation_run, AblationConfig, AblationReport, AblationSeedResult, MeanStd, VariantMetrics,
};
pub use metrics::{
    class_scores, confusion_metrics, diagnosis_report, roc_auc, roc_auc_ovr, roc_curve, MetricMode, MetricsRow,
    RocCurve, SUSPECT_ROW,
};
pub use triage::{triage_simulation, TriageCase, TriageConfig, TriageCurve};
