//! Scene sampling: boxes, classes, size bands.

use super::{BoxPx, Scene, SceneObject, SizeBand, WorldConfig};
use crate::error::{DmtError, Result};
use rand::Rng;

fn pick_band(cfg: &WorldConfig, rng: &mut impl Rng) -> SizeBand {
    let total: f64 = cfg.band_mix.iter().sum();
    let mut t = rng.gen_range(0.0..total);
    for (band, &w) in SizeBand::ALL.iter().zip(&cfg.band_mix) {
        if t < w {
            return *band;
        }
        t -= w;
    }
    SizeBand::Huge
}

/// Sample a box whose pixel area falls in `band`. Errors when the band is
/// infeasible on this canvas (e.g. a huge box on a tiny canvas).
fn sample_box(band: SizeBand, cfg: &WorldConfig, rng: &mut impl Rng) -> Result<BoxPx> {
    let s = cfg.canvas;
    let (lo, hi) = band.area_bounds(s);
    let lo = lo.max(1.0);
    let hi = hi.min((s * s) as f64);
    if hi <= lo {
        return Err(DmtError::World(format!(
            "size band {} infeasible on canvas {}",
            band.name(),
            s
        )));
    }
    for _ in 0..64 {
        let area = rng.gen_range(lo..hi);
        let aspect = rng.gen_range(0.6..1.6667);
        let w = ((area * aspect).sqrt().round() as usize).clamp(1, s);
        let h = ((area / aspect).sqrt().round() as usize).clamp(1, s);
        if SizeBand::of_area(w * h, s) != band {
            continue;
        }
        let x = rng.gen_range(0..=s - w);
        let y = rng.gen_range(0..=s - h);
        return Ok(BoxPx { x, y, w, h });
    }
    Err(DmtError::World(format!(
        "could not fit a {} box on canvas {} after 64 attempts",
        band.name(),
        s
    )))
}

/// Sample one scene: a sounding object in the configured size-band mix plus
/// non-overlapping distractors of other classes.
pub fn generate_scene(rng: &mut impl Rng, cfg: &WorldConfig) -> Result<Scene> {
    let sounding_class = rng.gen_range(0..cfg.classes);
    let band = pick_band(cfg, rng);
    let bbox = sample_box(band, cfg, rng)?;
    let mut objects = vec![SceneObject {
        class_id: sounding_class,
        bbox,
        appearance_seed: rng.gen(),
        sounding: true,
    }];

    let extra = rng.gen_range(cfg.min_objects..=cfg.max_objects) - 1;
    for _ in 0..extra {
        // distractors reuse the mix but never the sounding class, and must
        // not overlap anything already placed; give up quietly on crowding
        let d_band = pick_band(cfg, rng);
        let mut placed = false;
        for _ in 0..30 {
            let candidate = match sample_box(d_band, cfg, rng) {
                Ok(b) => b,
                Err(_) => break,
            };
            if objects.iter().any(|o| o.bbox.overlaps(&candidate)) {
                continue;
            }
            let mut class_id = rng.gen_range(0..cfg.classes - 1);
            if class_id >= sounding_class {
                class_id += 1;
            }
            objects.push(SceneObject {
                class_id,
                bbox: candidate,
                appearance_seed: rng.gen(),
                sounding: false,
            });
            placed = true;
            break;
        }
        if !placed {
            continue;
        }
    }

    Ok(Scene {
        canvas: cfg.canvas,
        objects,
        background_seed: rng.gen(),
    })
}

/// Background-only scene for false positives with no rendered object.
pub(super) fn empty_scene(rng: &mut impl Rng, cfg: &WorldConfig) -> Scene {
    Scene {
        canvas: cfg.canvas,
        objects: Vec::new(),
        background_seed: rng.gen(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn degenerate_mix_yields_only_huge_boxes() {
        let cfg = WorldConfig {
            band_mix: [0.0, 0.0, 0.0, 1.0],
            ..WorldConfig::default()
        };
        for i in 0..50 {
            let scene = generate_scene(&mut stream(1, Stream::Scene, i), &cfg).unwrap();
            let area = scene.sounding().unwrap().bbox.area();
            assert_eq!(SizeBand::of_area(area, cfg.canvas), SizeBand::Huge);
        }
    }

    #[test]
    fn same_seed_and_index_reproduces_scene() {
        let cfg = WorldConfig::default();
        let a = generate_scene(&mut stream(7, Stream::Scene, 3), &cfg).unwrap();
        let b = generate_scene(&mut stream(7, Stream::Scene, 3), &cfg).unwrap();
        assert_eq!(a.objects.len(), b.objects.len());
        assert_eq!(a.background_seed, b.background_seed);
        for (x, y) in a.objects.iter().zip(&b.objects) {
            assert_eq!(x.bbox, y.bbox);
            assert_eq!(x.class_id, y.class_id);
            assert_eq!(x.appearance_seed, y.appearance_seed);
        }
    }

    #[test]
    fn band_frequencies_follow_the_mix() {
        // law-of-large-numbers counting oracle on a 50/50 mix
        let cfg = WorldConfig {
            band_mix: [0.5, 0.0, 0.5, 0.0],
            ..WorldConfig::default()
        };
        let n = 10_000;
        let mut small = 0usize;
        for i in 0..n {
            let scene = generate_scene(&mut stream(11, Stream::Scene, i), &cfg).unwrap();
            let area = scene.sounding().unwrap().bbox.area();
            match SizeBand::of_area(area, cfg.canvas) {
                SizeBand::Small => small += 1,
                SizeBand::Large => {}
                other => panic!("unexpected band {:?}", other),
            }
        }
        let freq = small as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.02, "small frequency {freq}");
    }

    #[test]
    fn infeasible_band_is_an_error() {
        // on a 6-canvas the small band tops out below one pixel of area,
        // so no integer box can ever land in it
        let cfg = WorldConfig {
            canvas: 6,
            map_res: 3,
            band_mix: [1.0, 0.0, 0.0, 0.0],
            ..WorldConfig::default()
        };
        let res = generate_scene(&mut stream(1, Stream::Scene, 0), &cfg);
        assert!(res.is_err());
    }
}
