//! Binarization, mask IoU, consensus noise filtering, and intersection
//! pseudo-labels.

use super::DmtConfig;
use crate::error::{DmtError, Result};
use crate::maps::{BinaryMap, ConfidenceMap};
use crate::pipeline::{net_confidence_maps, AvslNet};
use crate::rng::{stream2, Stream};
use crate::world::{augment, inverse_transform_map, AugmentationSpec, PairRecord};

/// M(x,y) = 1 iff P(x,y) >= delta (inclusive).
pub fn binarize(p: &ConfidenceMap, delta: f64) -> Result<BinaryMap> {
    if !(-1.0 < delta && delta < 1.0) {
        return Err(DmtError::config("delta", "must lie in (-1, 1)"));
    }
    Ok(BinaryMap::from_fn(p.h(), p.w(), |y, x| p.get(y, x) >= delta))
}

/// Intersection over union of two binary masks. Two empty masks agree
/// perfectly (1.0); an empty mask against a non-empty one scores 0.
pub fn map_iou(a: &BinaryMap, b: &BinaryMap) -> Result<f64> {
    if a.h() != b.h() || a.w() != b.w() {
        return Err(DmtError::ShapeMismatch {
            op: "map_iou",
            lhs: vec![a.h(), a.w()],
            rhs: vec![b.h(), b.w()],
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Pixelwise AND of the two teacher masks.
pub fn make_ipl(mask_a: &BinaryMap, mask_b: &BinaryMap) -> Result<BinaryMap> {
    mask_a.and(mask_b)
}

/// Both teachers' view of one unlabeled sample, in canonical coordinates.
#[derive(Debug, Clone)]
pub struct DualMasks {
    pub index: usize,
    pub mask_a: BinaryMap,
    pub mask_b: BinaryMap,
    pub iou: f64,
    pub ipl: BinaryMap,
}

/// An accepted pseudo-labeled sample.
#[derive(Debug, Clone)]
pub struct PseudoLabel {
    pub index: usize,
    pub label: BinaryMap,
    pub iou: f64,
}

/// Outcome of one filtering pass over the unlabeled pool.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    /// Accepted samples carrying a usable (non-empty) pseudo-label.
    pub accepted: Vec<PseudoLabel>,
    /// Rejected by consensus, with the failing IoU for diagnostics.
    pub rejected: Vec<(usize, f64)>,
    /// Consensus reached on an empty intersection; dropped from training.
    pub accepted_empty: Vec<usize>,
    /// Raw dual-teacher masks for every sample, in input order.
    pub masks: Vec<DualMasks>,
}

/// Compute both teachers' binary masks for every record. Each teacher sees
/// its own weakly augmented view; masks are mapped back to canonical
/// coordinates through the inverse geometry.
pub fn dual_teacher_masks(
    records: &[PairRecord],
    teacher_a: &AvslNet,
    teacher_b: &AvslNet,
    cfg: &DmtConfig,
    seed: u64,
    epoch: u64,
) -> Result<Vec<DualMasks>> {
    const CHUNK: usize = 128;
    let mut out = Vec::with_capacity(records.len());
    for (chunk_idx, chunk) in records.chunks(CHUNK).enumerate() {
        let mut masks_per_teacher: Vec<Vec<BinaryMap>> = Vec::with_capacity(2);
        for (t_idx, teacher) in [teacher_a, teacher_b].into_iter().enumerate() {
            let mut views = Vec::with_capacity(chunk.len());
            let mut specs = Vec::with_capacity(chunk.len());
            for r in chunk {
                let mut rng = stream2(
                    seed,
                    Stream::Filter,
                    epoch * 2 + t_idx as u64,
                    r.pair.id.0,
                );
                let spec = AugmentationSpec::sample_weak(&mut rng);
                let (vis, _) = augment(&r.pair.visual, None, &spec)?;
                views.push(vis);
                specs.push(spec);
            }
            let vis_refs: Vec<&crate::tensor::Tensor> = views.iter().collect();
            let aud_refs: Vec<&[f64]> = chunk.iter().map(|r| r.pair.audio.as_slice()).collect();
            let maps = net_confidence_maps(teacher, &vis_refs, &aud_refs)?;
            let mut masks = Vec::with_capacity(chunk.len());
            for (map, spec) in maps.iter().zip(&specs) {
                let mask = binarize(map, cfg.delta)?;
                masks.push(inverse_transform_map(&mask, &spec.geoms)?);
            }
            masks_per_teacher.push(masks);
        }
        let (ma, mb) = (&masks_per_teacher[0], &masks_per_teacher[1]);
        for i in 0..chunk.len() {
            let iou = map_iou(&ma[i], &mb[i])?;
            let ipl = make_ipl(&ma[i], &mb[i])?;
            out.push(DualMasks {
                index: chunk_idx * CHUNK + i,
                mask_a: ma[i].clone(),
                mask_b: mb[i].clone(),
                iou,
                ipl,
            });
        }
    }
    Ok(out)
}

/// Consensus filter: keep a sample when the teachers' mask IoU reaches tau
/// and the intersection is non-empty.
pub fn noise_filter(
    records: &[PairRecord],
    teacher_a: &AvslNet,
    teacher_b: &AvslNet,
    cfg: &DmtConfig,
    seed: u64,
    epoch: u64,
) -> Result<FilterOutcome> {
    let masks = dual_teacher_masks(records, teacher_a, teacher_b, cfg, seed, epoch)?;
    Ok(apply_consensus(masks, cfg.tau, true, true))
}

/// Split dual masks into accepted / rejected per the consensus rule.
/// `filter_enabled=false` accepts everything; `ipl_enabled=false` uses
/// teacher A's mask as the pseudo-label instead of the intersection.
pub(super) fn apply_consensus(
    masks: Vec<DualMasks>,
    tau: f64,
    filter_enabled: bool,
    ipl_enabled: bool,
) -> FilterOutcome {
    let mut out = FilterOutcome {
        accepted: Vec::new(),
        rejected: Vec::new(),
        accepted_empty: Vec::new(),
        masks: Vec::new(),
    };
    for m in &masks {
        if filter_enabled && m.iou < tau {
            out.rejected.push((m.index, m.iou));
            continue;
        }
        let label = if ipl_enabled { m.ipl.clone() } else { m.mask_a.clone() };
        if label.is_empty_mask() {
            out.accepted_empty.push(m.index);
        } else {
            out.accepted.push(PseudoLabel {
                index: m.index,
                label,
                iou: m.iou,
            });
        }
    }
    out.masks = masks;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_saturated_map_is_all_ones() {
        let p = ConfidenceMap::new(2, 2, vec![1.0; 4]).unwrap();
        let m = binarize(&p, 0.6).unwrap();
        assert_eq!(m.count_ones(), 4);
    }

    #[test]
    fn binarize_is_inclusive_at_the_threshold() {
        let p = ConfidenceMap::new(2, 2, vec![0.6; 4]).unwrap();
        let m = binarize(&p, 0.6).unwrap();
        assert_eq!(m.count_ones(), 4);
    }

    #[test]
    fn binarize_matches_pixel_loop_oracle() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = ConfidenceMap::new(8, 8, vals.clone()).unwrap();
        let m = binarize(&p, 0.25).unwrap();
        for (i, &v) in vals.iter().enumerate() {
            assert_eq!(m.data()[i] == 1, v >= 0.25, "pixel {i}");
        }
    }

    #[test]
    fn iou_of_identical_nonempty_masks_is_one() {
        let m = BinaryMap::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        assert_eq!(map_iou(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn iou_of_disjoint_masks_is_zero() {
        let a = BinaryMap::new(2, 2, vec![1, 0, 0, 0]).unwrap();
        let b = BinaryMap::new(2, 2, vec![0, 1, 0, 0]).unwrap();
        assert_eq!(map_iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_count_oracle_two_by_two() {
        // m1 = {(0,0),(0,1)}, m2 = {(0,1),(1,1)}: intersection 1, union 3
        let m1 = BinaryMap::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let m2 = BinaryMap::new(2, 2, vec![0, 1, 0, 1]).unwrap();
        let iou = map_iou(&m1, &m2).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn both_empty_masks_agree() {
        let a = BinaryMap::zeros(4, 4);
        assert_eq!(map_iou(&a, &a).unwrap(), 1.0);
        let b = BinaryMap::new(4, 4, {
            let mut d = vec![0; 16];
            d[3] = 1;
            d
        })
        .unwrap();
        assert_eq!(map_iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn ipl_identity_and_annihilation() {
        let ones = BinaryMap::new(2, 2, vec![1, 1, 1, 1]).unwrap();
        let m = BinaryMap::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        assert_eq!(make_ipl(&m, &ones).unwrap(), m);
        let disjoint = BinaryMap::new(2, 2, vec![0, 1, 0, 1]).unwrap();
        assert!(make_ipl(&m, &disjoint).unwrap().is_empty_mask());
    }

    #[test]
    fn ipl_matches_pixel_and_oracle() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a_vals: Vec<u8> = (0..36).map(|_| rng.gen_bool(0.5) as u8).collect();
        let b_vals: Vec<u8> = (0..36).map(|_| rng.gen_bool(0.5) as u8).collect();
        let a = BinaryMap::new(6, 6, a_vals.clone()).unwrap();
        let b = BinaryMap::new(6, 6, b_vals.clone()).unwrap();
        let ipl = make_ipl(&a, &b).unwrap();
        for i in 0..36 {
            assert_eq!(ipl.data()[i], a_vals[i] & b_vals[i]);
        }
    }

    #[test]
    fn consensus_with_zero_tau_accepts_all_nonempty() {
        let mk = |v: Vec<u8>| BinaryMap::new(2, 2, v).unwrap();
        let masks = vec![
            DualMasks {
                index: 0,
                mask_a: mk(vec![1, 0, 0, 0]),
                mask_b: mk(vec![0, 0, 0, 1]),
                iou: 0.0,
                ipl: mk(vec![0, 0, 0, 0]),
            },
            DualMasks {
                index: 1,
                mask_a: mk(vec![1, 1, 0, 0]),
                mask_b: mk(vec![1, 0, 0, 0]),
                iou: 0.5,
                ipl: mk(vec![1, 0, 0, 0]),
            },
        ];
        let out = apply_consensus(masks, 0.0, true, true);
        assert_eq!(out.rejected.len(), 0);
        assert_eq!(out.accepted.len(), 1); // sample 0 has an empty IPL
        assert_eq!(out.accepted_empty, vec![0]);
    }

    #[test]
    fn consensus_at_tau_one_requires_identical_masks() {
        let mk = |v: Vec<u8>| BinaryMap::new(2, 2, v).unwrap();
        let same = DualMasks {
            index: 0,
            mask_a: mk(vec![1, 1, 0, 0]),
            mask_b: mk(vec![1, 1, 0, 0]),
            iou: 1.0,
            ipl: mk(vec![1, 1, 0, 0]),
        };
        let diff = DualMasks {
            index: 1,
            mask_a: mk(vec![1, 1, 0, 0]),
            mask_b: mk(vec![1, 0, 0, 0]),
            iou: 0.5,
            ipl: mk(vec![1, 0, 0, 0]),
        };
        let out = apply_consensus(vec![same, diff], 1.0, true, true);
        assert_eq!(out.accepted.len(), 1);
        assert_eq!(out.accepted[0].index, 0);
        assert_eq!(out.rejected, vec![(1, 0.5)]);
    }
}
