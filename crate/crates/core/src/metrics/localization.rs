//! IoU, CIoU, AUC, MSE.

use crate::error::{DmtError, Result};
use crate::maps::{BinaryMap, ConfidenceMap};

/// IoU thresholds for the AUC sweep: 0.05, 0.10, ..., 0.95.
pub const AUC_THRESHOLDS: usize = 19;

/// IoU of the thresholded prediction against ground truth.
///
/// `pred` must already be min-max normalized to [0, 1]; cells with value
/// >= `delta_eval` count as foreground. Empty ground truth is only legal on
/// false-positive samples, which the caller handles before thresholding.
pub fn sample_iou(pred: &ConfidenceMap, gt: &BinaryMap, delta_eval: f64) -> Result<f64> {
    if pred.h() != gt.h() || pred.w() != gt.w() {
        return Err(DmtError::ShapeMismatch {
            op: "sample_iou",
            lhs: vec![pred.h(), pred.w()],
            rhs: vec![gt.h(), gt.w()],
        });
    }
    if gt.is_empty_mask() {
        return Err(DmtError::domain(
            "sample_iou",
            "empty ground truth on a genuine sample",
        ));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let fg = p >= delta_eval;
        inter += (fg && g == 1) as usize;
        union += (fg || g == 1) as usize;
    }
    Ok(inter as f64 / union as f64)
}

/// Fraction of samples whose IoU reaches `theta` (inclusive).
pub fn ciou(ious: &[f64], theta: f64) -> Result<f64> {
    if ious.is_empty() {
        return Err(DmtError::domain("ciou", "empty record set"));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(DmtError::config("theta", "must lie in [0, 1]"));
    }
    let hits = ious.iter().filter(|&&v| v >= theta).count();
    Ok(hits as f64 / ious.len() as f64)
}

/// Trapezoidal area under CIoU(theta) for theta in {0.05, ..., 0.95},
/// normalized to [0, 1].
pub fn auc(ious: &[f64]) -> Result<f64> {
    if ious.is_empty() {
        return Err(DmtError::domain("auc", "empty record set"));
    }
    let thresholds: Vec<f64> = (1..=AUC_THRESHOLDS).map(|i| i as f64 * 0.05).collect();
    let curve: Vec<f64> = thresholds
        .iter()
        .map(|&t| ciou(ious, t).expect("non-empty"))
        .collect();
    let mut area = 0.0;
    for i in 1..curve.len() {
        area += 0.5 * (curve[i] + curve[i - 1]) * (thresholds[i] - thresholds[i - 1]);
    }
    let span = thresholds[AUC_THRESHOLDS - 1] - thresholds[0];
    Ok(area / span)
}

/// Mean squared error between a normalized prediction and binary ground
/// truth (no binarization of the prediction).
pub fn map_mse(pred: &ConfidenceMap, gt: &BinaryMap) -> Result<f64> {
    if pred.h() != gt.h() || pred.w() != gt.w() {
        return Err(DmtError::ShapeMismatch {
            op: "map_mse",
            lhs: vec![pred.h(), pred.w()],
            rhs: vec![gt.h(), gt.w()],
        });
    }
    let mut acc = 0.0;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let d = p - g as f64;
        acc += d * d;
    }
    Ok(acc / pred.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_of(vals: Vec<f64>, side: usize) -> ConfidenceMap {
        ConfidenceMap::new(side, side, vals).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = BinaryMap::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        let pred = map_of(vec![1.0, 0.0, 1.0, 0.0], 2);
        assert_eq!(sample_iou(&pred, &gt, 0.6).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_prediction_scores_zero() {
        let gt = BinaryMap::new(2, 2, vec![1, 0, 0, 0]).unwrap();
        let pred = map_of(vec![0.0, 1.0, 0.0, 0.0], 2);
        assert_eq!(sample_iou(&pred, &gt, 0.6).unwrap(), 0.0);
    }

    #[test]
    fn four_by_four_count_oracle() {
        // pred foreground 4 cells, gt 8 cells, overlap 2 -> 2/10
        let mut pred_vals = vec![0.0; 16];
        for i in [0usize, 1, 2, 3] {
            pred_vals[i] = 1.0;
        }
        let mut gt_vals = vec![0u8; 16];
        for i in [2usize, 3, 4, 5, 6, 7, 8, 9] {
            gt_vals[i] = 1;
        }
        let pred = map_of(pred_vals, 4);
        let gt = BinaryMap::new(4, 4, gt_vals).unwrap();
        let iou = sample_iou(&pred, &gt, 0.5).unwrap();
        assert!((iou - 0.2).abs() < 1e-15);
    }

    #[test]
    fn empty_gt_is_an_error() {
        let gt = BinaryMap::zeros(2, 2);
        let pred = map_of(vec![1.0; 4], 2);
        assert!(sample_iou(&pred, &gt, 0.5).is_err());
    }

    #[test]
    fn ciou_inclusive_threshold_oracle() {
        let ious = [0.6, 0.4, 0.5, 0.7];
        assert!((ciou(&ious, 0.5).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ciou_vacuous_threshold() {
        let ious = [0.0, 0.3, 1.0];
        assert_eq!(ciou(&ious, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn ciou_of_empty_set_errors() {
        assert!(ciou(&[], 0.5).is_err());
    }

    #[test]
    fn auc_flat_extremes() {
        assert!((auc(&[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(auc(&[0.0, 0.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn auc_half_and_half_is_half() {
        // CIoU(theta) = 0.5 at every threshold
        assert!((auc(&[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auc_matches_hand_trapezoid_on_a_step() {
        // one sample with IoU 0.5: curve is 1 for theta <= 0.5, 0 beyond;
        // hand trapezoid over {0.05..0.95}: 9 full panels (0.05..0.50),
        // one half panel (0.50..0.55), 8 zero panels; area = 0.45 + 0.025
        let a = auc(&[0.5]).unwrap();
        let expect = (0.45 + 0.025) / 0.9;
        assert!((a - expect).abs() < 1e-12, "{a} vs {expect}");
    }

    #[test]
    fn mse_zero_on_exact_match_and_quarter_on_half_offset() {
        let gt = BinaryMap::new(2, 2, vec![1, 1, 1, 1]).unwrap();
        let exact = map_of(vec![1.0; 4], 2);
        assert_eq!(map_mse(&exact, &gt).unwrap(), 0.0);
        let half = map_of(vec![0.5; 4], 2);
        assert!((map_mse(&half, &gt).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mse_matches_pixel_loop_oracle() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pred_vals: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let gt_vals: Vec<u8> = (0..16).map(|_| rng.gen_bool(0.5) as u8).collect();
        let pred = map_of(pred_vals.clone(), 4);
        let gt = BinaryMap::new(4, 4, gt_vals.clone()).unwrap();
        let got = map_mse(&pred, &gt).unwrap();
        let mut acc = 0.0;
        for i in 0..16 {
            acc += (pred_vals[i] - gt_vals[i] as f64).powi(2);
        }
        assert!((got - acc / 16.0).abs() < 1e-12);
    }

    #[test]
    fn constant_map_normalizes_to_half() {
        let m = ConfidenceMap::new(2, 2, vec![0.3; 4]).unwrap();
        let n = m.min_max_normalized();
        assert!(n.data().iter().all(|&v| v == 0.5));
    }
}
