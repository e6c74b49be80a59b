//! Max-F1 and average precision for false-positive handling.
//!
//! A sample's detection confidence is the max pixel of its prediction after
//! min-max normalization across the whole record set (per-sample
//! normalization would pin every max at 1). Localization correctness uses
//! the usual per-sample normalized IoU.

use super::{EvalRecord, CIOU_THRESHOLD, EVAL_DELTA};
use crate::error::{DmtError, Result};
use crate::metrics::sample_iou;

/// One point of the detection sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub delta: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone)]
pub struct DetectionCurve {
    pub points: Vec<PrPoint>,
    pub max_f1: f64,
    pub ap: f64,
    /// Accuracy (correct decisions / all samples) at the F1-maximizing delta.
    pub accuracy: f64,
}

/// Per-sample detection inputs derived from the records.
fn detection_inputs(records: &[EvalRecord]) -> Result<Vec<(f64, bool, bool)>> {
    let mut global_min = f64::INFINITY;
    let mut global_max = f64::NEG_INFINITY;
    for r in records {
        for &v in r.pred.data() {
            global_min = global_min.min(v);
            global_max = global_max.max(v);
        }
    }
    let range = global_max - global_min;
    records
        .iter()
        .map(|r| {
            let conf = if range <= 0.0 {
                0.5
            } else {
                (r.pred.max_value() - global_min) / range
            };
            let hit = if r.is_false_positive {
                false
            } else {
                let norm = r.pred.min_max_normalized();
                sample_iou(&norm, &r.gt, EVAL_DELTA)? >= CIOU_THRESHOLD
            };
            Ok((conf, !r.is_false_positive, hit))
        })
        .collect()
}

/// Sweep the detection threshold over {0.00, 0.01, ..., 1.00}. At each
/// threshold a detected genuine sample with IoU >= 0.5 is a true positive,
/// any other detection is a false positive, and an undetected genuine
/// sample is a false negative.
pub fn max_f1_ap(records: &[EvalRecord]) -> Result<DetectionCurve> {
    if records.is_empty() {
        return Err(DmtError::domain("max_f1_ap", "empty record set"));
    }
    let inputs = detection_inputs(records)?;
    let mut points = Vec::with_capacity(101);
    let mut max_f1 = 0.0;
    let mut best_acc = 0.0;
    for step in 0..=100usize {
        let delta = step as f64 / 100.0;
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        let mut tn = 0usize;
        for &(conf, genuine, hit) in &inputs {
            let detected = conf >= delta;
            match (detected, genuine, hit) {
                (true, true, true) => tp += 1,
                (true, _, _) => fp += 1,
                (false, true, _) => fn_ += 1,
                (false, false, _) => tn += 1,
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if f1 > max_f1 {
            max_f1 = f1;
            best_acc = (tp + tn) as f64 / records.len() as f64;
        }
        points.push(PrPoint {
            delta,
            precision,
            recall,
            f1,
        });
    }
    if max_f1 == 0.0 {
        // no threshold detected anything correctly; report accuracy of the
        // all-rejecting threshold
        let n_fp = records.iter().filter(|r| r.is_false_positive).count();
        best_acc = n_fp as f64 / records.len() as f64;
    }
    let ap = average_precision(&points);
    Ok(DetectionCurve {
        points,
        max_f1,
        ap,
        accuracy: best_acc,
    })
}

/// Area under the precision-recall curve with monotone interpolation:
/// precision at recall r is replaced by the max precision at any recall
/// >= r, then integrated by trapezoid from recall 0 to the largest recall.
fn average_precision(points: &[PrPoint]) -> f64 {
    let mut pr: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    pr.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // envelope from the right
    let mut best = 0.0;
    for p in pr.iter_mut().rev() {
        best = f64::max(best, p.1);
        p.1 = best;
    }
    let mut area = 0.0;
    let mut prev = (0.0, pr.first().map(|p| p.1).unwrap_or(0.0));
    for &(r, p) in pr.iter() {
        if r > prev.0 {
            area += (r - prev.0) * 0.5 * (p + prev.1);
        }
        prev = (r, p);
    }
    area
}
