//! Evaluation metrics: per-sample IoU, CIoU, AUC, MSE, and the
//! precision/recall family for false-positive handling.

mod detection;
mod localization;
mod report;

pub use detection::{max_f1_ap, DetectionCurve, PrPoint};
pub use localization::{auc, ciou, map_mse, sample_iou, AUC_THRESHOLDS};
pub use report::{BandReport, MetricReport};

use crate::maps::{BinaryMap, ConfidenceMap};
use crate::world::SizeBand;

/// Evaluation-time binarization threshold on min-max normalized maps,
/// mirroring the training-time foreground threshold.
pub const EVAL_DELTA: f64 = 0.6;

/// CIoU accuracy threshold.
pub const CIOU_THRESHOLD: f64 = 0.5;

/// Per-sample evaluation input: a fused prediction, its ground truth, the
/// false-positive flag, and the size band (None on false positives).
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub id: u64,
    pub pred: ConfidenceMap,
    pub gt: BinaryMap,
    pub is_false_positive: bool,
    pub band: Option<SizeBand>,
}
