//! Censoring-aware discrimination and prediction-error metrics, ROC
//! clinical rates and confidence intervals across repeats.

mod ci;
mod concordance;
mod roc;
mod timedep;

pub use ci::{aggregate_ci, MetricValue};
pub use concordance::{harrell_cindex, ipcw_cindex, ipcw_cindex_with};
pub use roc::{auroc, confusion_at, roc_with_clinical_metrics, RocPoint};
pub use timedep::{brier_score, dynamic_auc, integrated_brier};
