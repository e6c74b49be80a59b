//! Split construction: labeled / unlabeled / val / test.

use super::scene::empty_scene;
use super::{generate_scene, render_pair, PairRecord, SampleId, SizeBand, Split, WorldConfig};
use crate::error::Result;
use crate::rng::{stream, Stream};
use rand::Rng;

/// The four disjoint splits of one synthetic world.
#[derive(Debug, Clone)]
pub struct SplitSet {
    pub labeled: Vec<PairRecord>,
    pub unlabeled: Vec<PairRecord>,
    pub val: Vec<PairRecord>,
    pub test: Vec<PairRecord>,
}

impl SplitSet {
    pub fn split(&self, s: Split) -> &[PairRecord] {
        match s {
            Split::Labeled => &self.labeled,
            Split::Unlabeled => &self.unlabeled,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

fn build_record(
    cfg: &WorldConfig,
    seed: u64,
    id: u64,
    split: Split,
    fp_rate: f64,
) -> Result<PairRecord> {
    let mut fp_rng = stream(seed, Stream::Splits, id);
    let is_fp = fp_rate > 0.0 && fp_rng.gen_bool(fp_rate);
    let mut scene_rng = stream(seed, Stream::Scene, id);
    let (scene, class_id, bbox, band) = if is_fp {
        // half the false positives keep visible (non-sounding) objects,
        // half render nothing at all
        if fp_rng.gen_bool(0.5) {
            let scene = generate_scene(&mut scene_rng, cfg)?;
            (scene, None, None, None)
        } else {
            (empty_scene(&mut scene_rng, cfg), None, None, None)
        }
    } else {
        let scene = generate_scene(&mut scene_rng, cfg)?;
        let obj = scene.sounding().expect("genuine scene has a sounding object");
        let (class_id, bbox) = (obj.class_id, obj.bbox);
        let band = SizeBand::of_area(bbox.area(), cfg.canvas);
        (scene, Some(class_id), Some(bbox), Some(band))
    };
    let mut pair = render_pair(&scene, cfg, seed, SampleId(id), split, is_fp)?;
    // ground truth is public on labeled/val/test, instrumentation-only on
    // unlabeled
    let hidden_gt = if split == Split::Unlabeled {
        pair.gt.take()
    } else {
        None
    };
    Ok(PairRecord {
        pair,
        class_id,
        bbox,
        band,
        hidden_gt,
    })
}

/// Generate the four splits. Sample ids are disjoint by construction and
/// every record is a pure function of (seed, config).
pub fn make_splits(cfg: &WorldConfig, seed: u64) -> Result<SplitSet> {
    cfg.validate()?;
    let n_l = cfg.n_labeled();
    let ranges = [
        (Split::Labeled, 0u64, n_l as u64, 0.0),
        (Split::Unlabeled, n_l as u64, cfg.n_unlabeled as u64, cfg.fp_rate_unlabeled),
        (
            Split::Val,
            (n_l + cfg.n_unlabeled) as u64,
            cfg.n_val as u64,
            0.0,
        ),
        (
            Split::Test,
            (n_l + cfg.n_unlabeled + cfg.n_val) as u64,
            cfg.n_test as u64,
            cfg.fp_rate_test,
        ),
    ];
    let mut out: Vec<Vec<PairRecord>> = Vec::with_capacity(4);
    for &(split, start, count, fp_rate) in &ranges {
        let mut records = Vec::with_capacity(count as usize);
        for id in start..start + count {
            records.push(build_record(cfg, seed, id, split, fp_rate)?);
        }
        out.push(records);
    }
    let mut it = out.into_iter();
    Ok(SplitSet {
        labeled: it.next().unwrap(),
        unlabeled: it.next().unwrap(),
        val: it.next().unwrap(),
        test: it.next().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_cfg() -> WorldConfig {
        WorldConfig {
            n_unlabeled: 100,
            labeled_ratio: 0.1,
            n_val: 20,
            n_test: 30,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn labeled_count_follows_ratio() {
        let cfg = WorldConfig {
            n_unlabeled: 4000,
            labeled_ratio: 0.1,
            n_val: 10,
            n_test: 10,
            ..WorldConfig::default()
        };
        assert_eq!(cfg.n_labeled(), 400);
    }

    #[test]
    fn splits_are_disjoint_by_id() {
        let cfg = small_cfg();
        let s = make_splits(&cfg, 5).unwrap();
        let mut seen = HashSet::new();
        for split in [&s.labeled, &s.unlabeled, &s.val, &s.test] {
            for r in split.iter() {
                assert!(seen.insert(r.pair.id), "duplicate id {:?}", r.pair.id);
            }
        }
        assert_eq!(seen.len(), 10 + 100 + 20 + 30);
    }

    #[test]
    fn false_positive_count_matches_rate() {
        // binomial counting oracle: 1000 unlabeled at rate 0.2
        let cfg = WorldConfig {
            n_unlabeled: 1000,
            labeled_ratio: 0.02,
            n_val: 5,
            n_test: 5,
            fp_rate_unlabeled: 0.2,
            ..WorldConfig::default()
        };
        let s = make_splits(&cfg, 9).unwrap();
        let n_fp = s.unlabeled.iter().filter(|r| r.pair.is_false_positive).count();
        // 4-sigma band around np = 200, sigma ~ 12.6
        assert!((150..=250).contains(&n_fp), "fp count {n_fp}");
        assert!(s.labeled.iter().all(|r| !r.pair.is_false_positive));
        assert!(s.test.iter().all(|r| !r.pair.is_false_positive));
    }

    #[test]
    fn gt_visibility_follows_split() {
        let cfg = small_cfg();
        let s = make_splits(&cfg, 7).unwrap();
        for r in &s.labeled {
            assert!(r.pair.gt.is_some());
            assert!(r.hidden_gt.is_none());
        }
        for r in &s.unlabeled {
            assert!(r.pair.gt.is_none());
            assert!(r.hidden_gt.is_some());
        }
        for r in s.val.iter().chain(&s.test) {
            assert!(r.pair.gt.is_some());
        }
    }

    #[test]
    fn generation_is_a_pure_function_of_seed_and_config() {
        let cfg = small_cfg();
        let a = make_splits(&cfg, 11).unwrap();
        let b = make_splits(&cfg, 11).unwrap();
        for (x, y) in a.unlabeled.iter().zip(&b.unlabeled) {
            assert_eq!(x.pair.visual.data(), y.pair.visual.data());
            assert_eq!(x.pair.audio, y.pair.audio);
            assert_eq!(x.hidden_gt, y.hidden_gt);
        }
        let c = make_splits(&cfg, 12).unwrap();
        let same = a
            .unlabeled
            .iter()
            .zip(&c.unlabeled)
            .all(|(x, y)| x.pair.visual.data() == y.pair.visual.data());
        assert!(!same, "different seeds should differ");
    }
}
