//! Detection quality metrics: window labeling against known anomaly
//! intervals, ROC curves with tie handling, and host confusion matrices.

mod confusion;
mod roc;

pub use confusion::confusion_matrix;
pub use roc::{label_windows, roc_auc, Polarity, RocResult};
