//! Aggregated metric report and its serializations.

use super::{auc, ciou, map_mse, max_f1_ap, sample_iou, DetectionCurve, EvalRecord};
use super::{CIOU_THRESHOLD, EVAL_DELTA};
use crate::error::{DmtError, Result};
use crate::world::SizeBand;

/// Per-size-band slice of the genuine records.
#[derive(Debug, Clone, Copy)]
pub struct BandReport {
    pub count: usize,
    pub ciou: f64,
    pub mean_iou: f64,
    pub mse: f64,
}

/// Full evaluation of one record set.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub ciou: f64,
    pub auc: f64,
    pub mse: f64,
    pub max_f1: f64,
    pub ap: f64,
    /// Accuracy at the F1-maximizing detection threshold.
    pub acc: f64,
    pub curve: DetectionCurve,
    pub bands: Vec<(SizeBand, BandReport)>,
    pub n_genuine: usize,
    pub n_false_positive: usize,
}

impl MetricReport {
    /// Localization metrics run over genuine samples (per-sample normalized
    /// maps); detection metrics run over all samples.
    pub fn compute(records: &[EvalRecord]) -> Result<MetricReport> {
        let genuine: Vec<&EvalRecord> = records.iter().filter(|r| !r.is_false_positive).collect();
        if genuine.is_empty() {
            return Err(DmtError::domain("metric_report", "no genuine samples"));
        }
        let mut ious = Vec::with_capacity(genuine.len());
        let mut mse_acc = 0.0;
        for r in &genuine {
            let norm = r.pred.min_max_normalized();
            ious.push(sample_iou(&norm, &r.gt, EVAL_DELTA)?);
            mse_acc += map_mse(&norm, &r.gt)?;
        }
        let curve = max_f1_ap(records)?;

        let mut bands = Vec::new();
        for band in SizeBand::ALL {
            let members: Vec<(usize, &&EvalRecord)> = genuine
                .iter()
                .enumerate()
                .filter(|(_, r)| r.band == Some(band))
                .collect();
            if members.is_empty() {
                continue;
            }
            let band_ious: Vec<f64> = members.iter().map(|(i, _)| ious[*i]).collect();
            let mut band_mse = 0.0;
            for (_, r) in &members {
                band_mse += map_mse(&r.pred.min_max_normalized(), &r.gt)?;
            }
            bands.push((
                band,
                BandReport {
                    count: members.len(),
                    ciou: ciou(&band_ious, CIOU_THRESHOLD)?,
                    mean_iou: band_ious.iter().sum::<f64>() / band_ious.len() as f64,
                    mse: band_mse / members.len() as f64,
                },
            ));
        }

        Ok(MetricReport {
            ciou: ciou(&ious, CIOU_THRESHOLD)?,
            auc: auc(&ious)?,
            mse: mse_acc / genuine.len() as f64,
            max_f1: curve.max_f1,
            ap: curve.ap,
            acc: curve.accuracy,
            curve,
            bands,
            n_genuine: genuine.len(),
            n_false_positive: records.len() - genuine.len(),
        })
    }

    /// Key-per-line structured text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("ciou {:.6}\n", self.ciou));
        out.push_str(&format!("auc {:.6}\n", self.auc));
        out.push_str(&format!("mse {:.6}\n", self.mse));
        out.push_str(&format!("max_f1 {:.6}\n", self.max_f1));
        out.push_str(&format!("ap {:.6}\n", self.ap));
        out.push_str(&format!("acc {:.6}\n", self.acc));
        out.push_str(&format!("n_genuine {}\n", self.n_genuine));
        out.push_str(&format!("n_false_positive {}\n", self.n_false_positive));
        for (band, rep) in &self.bands {
            let name = band.name();
            out.push_str(&format!("band.{name}.count {}\n", rep.count));
            out.push_str(&format!("band.{name}.ciou {:.6}\n", rep.ciou));
            out.push_str(&format!("band.{name}.iou {:.6}\n", rep.mean_iou));
            out.push_str(&format!("band.{name}.mse {:.6}\n", rep.mse));
        }
        out
    }

    pub const CSV_HEADER: &'static str = "ciou,auc,mse,max_f1,ap,acc";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.ciou, self.auc, self.mse, self.max_f1, self.ap, self.acc
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{BinaryMap, ConfidenceMap};

    fn record(id: u64, iou_hit: bool, band: SizeBand) -> EvalRecord {
        // 4 gt cells; hit -> same 4 cells predicted, miss -> disjoint 4
        let gt_cells = [0usize, 1, 2, 3];
        let pred_cells: Vec<usize> = if iou_hit {
            gt_cells.to_vec()
        } else {
            vec![8, 9, 10, 11]
        };
        let mut vals = vec![0.0; 16];
        for &c in &pred_cells {
            vals[c] = 0.9;
        }
        let mut gt = vec![0u8; 16];
        for &c in &gt_cells {
            gt[c] = 1;
        }
        EvalRecord {
            id,
            pred: ConfidenceMap::new(4, 4, vals).unwrap(),
            gt: BinaryMap::new(4, 4, gt).unwrap(),
            is_false_positive: false,
            band: Some(band),
        }
    }

    #[test]
    fn band_counts_partition_genuine_records() {
        let records = vec![
            record(0, true, SizeBand::Small),
            record(1, false, SizeBand::Small),
            record(2, true, SizeBand::Huge),
        ];
        let rep = MetricReport::compute(&records).unwrap();
        let total: usize = rep.bands.iter().map(|(_, b)| b.count).sum();
        assert_eq!(total, rep.n_genuine);
        assert!((rep.ciou - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn text_report_has_fixed_keys() {
        let records = vec![record(0, true, SizeBand::Medium)];
        let rep = MetricReport::compute(&records).unwrap();
        let text = rep.to_text();
        for key in ["ciou ", "auc ", "mse ", "max_f1 ", "ap ", "acc ", "band.medium.ciou "] {
            assert!(text.contains(key), "missing `{key}` in:\n{text}");
        }
    }
}
