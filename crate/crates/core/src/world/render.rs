//! Rasterize scenes and synthesize audio embeddings.

use super::{AudioVisualPair, SampleId, Scene, Split, WorldConfig};
use crate::error::Result;
use crate::maps::BinaryMap;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;

/// Per-class texture recipe: anchor color, checker frequencies, phases.
#[derive(Debug, Clone)]
struct ClassStyle {
    color: [f64; 3],
    fx: f64,
    fy: f64,
    px: f64,
    py: f64,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(360.0)) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn class_styles(cfg: &WorldConfig, world_seed: u64) -> Vec<ClassStyle> {
    let mut rng = stream(world_seed, Stream::Render, u64::MAX);
    (0..cfg.classes)
        .map(|c| {
            let hue = 360.0 * c as f64 / cfg.classes as f64 + rng.gen_range(-10.0..10.0);
            ClassStyle {
                color: hsv_to_rgb(hue, rng.gen_range(0.55..0.85), rng.gen_range(0.65..0.95)),
                fx: rng.gen_range(2.0..5.0),
                fy: rng.gen_range(2.0..5.0),
                px: rng.gen_range(0.0..TAU),
                py: rng.gen_range(0.0..TAU),
            }
        })
        .collect()
}

/// Unit-norm class embeddings, fixed per world seed.
pub fn class_embeddings(cfg: &WorldConfig, world_seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(world_seed, Stream::Embeddings, 0);
    (0..cfg.classes)
        .map(|_| {
            let mut v: Vec<f64> = (0..cfg.audio_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect()
}

/// Snap to the 1/255 lattice so P6 export round-trips bit-exactly.
fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Ground-truth map: a cell is foreground when the box covers at least
/// half of its 2x2 pixel block.
pub(super) fn gt_map_of_box(bbox: &super::BoxPx, cfg: &WorldConfig) -> BinaryMap {
    let m = cfg.map_res;
    let r = cfg.canvas / m;
    BinaryMap::from_fn(m, m, |my, mx| {
        let (cx0, cy0) = (mx * r, my * r);
        let ox = overlap_1d(cx0, r, bbox.x, bbox.w);
        let oy = overlap_1d(cy0, r, bbox.y, bbox.h);
        2 * ox * oy >= r * r
    })
}

fn overlap_1d(a0: usize, alen: usize, b0: usize, blen: usize) -> usize {
    let lo = a0.max(b0);
    let hi = (a0 + alen).min(b0 + blen);
    hi.saturating_sub(lo)
}

struct RenderCtx {
    styles: Vec<ClassStyle>,
    embeddings: Vec<Vec<f64>>,
}

fn render_visual(scene: &Scene, cfg: &WorldConfig, ctx: &RenderCtx) -> Tensor {
    let s = cfg.canvas;
    let mut data = vec![0.0; s * s * 3];
    let mut bg_rng = stream(scene.background_seed, Stream::Render, 0);
    let bg_base = 0.25 + bg_rng.gen_range(0.0..0.15);
    let bg_fx = bg_rng.gen_range(0.5..1.5);
    let bg_fy = bg_rng.gen_range(0.5..1.5);
    let bg_phase = bg_rng.gen_range(0.0..TAU);
    for y in 0..s {
        for x in 0..s {
            let wave = 0.06
                * ((TAU * (bg_fx * x as f64 + bg_fy * y as f64) / s as f64) + bg_phase).sin();
            for c in 0..3 {
                let noise: f64 = bg_rng.sample::<f64, _>(StandardNormal);
                data[(y * s + x) * 3 + c] = bg_base + wave + 0.05 * noise;
            }
        }
    }
    for obj in &scene.objects {
        let style = &ctx.styles[obj.class_id];
        let mut obj_rng = stream(obj.appearance_seed, Stream::Render, 1);
        for y in obj.bbox.y..obj.bbox.y + obj.bbox.h {
            for x in obj.bbox.x..obj.bbox.x + obj.bbox.w {
                let u = x as f64 / s as f64;
                let v = y as f64 / s as f64;
                let pattern = 0.5
                    + 0.5 * (TAU * style.fx * u + style.px).sin() * (TAU * style.fy * v + style.py).sin();
                for c in 0..3 {
                    let noise: f64 = obj_rng.sample::<f64, _>(StandardNormal);
                    data[(y * s + x) * 3 + c] =
                        style.color[c] * (0.6 + 0.4 * pattern) + 0.04 * noise;
                }
            }
        }
    }
    for v in &mut data {
        *v = quantize(*v);
    }
    Tensor::new(vec![s, s, 3], data).expect("render shape")
}

fn synth_audio(class_id: usize, cfg: &WorldConfig, ctx: &RenderCtx, rng: &mut impl Rng) -> Vec<f64> {
    ctx.embeddings[class_id]
        .iter()
        .map(|&e| e + cfg.audio_noise * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Render one audio-visual pair from a scene.
///
/// Genuine samples pair the image with the sounding object's class audio and
/// carry a foreground map of its box. False positives either draw audio from
/// a class absent from the scene or render no object at all; their ground
/// truth is the empty map.
pub fn render_pair(
    scene: &Scene,
    cfg: &WorldConfig,
    world_seed: u64,
    id: SampleId,
    split: Split,
    false_positive: bool,
) -> Result<AudioVisualPair> {
    let ctx = RenderCtx {
        styles: class_styles(cfg, world_seed),
        embeddings: class_embeddings(cfg, world_seed),
    };
    let mut audio_rng = stream(world_seed, Stream::Audio, id.0);
    let visual = render_visual(scene, cfg, &ctx);
    if false_positive {
        let present: Vec<usize> = scene.objects.iter().map(|o| o.class_id).collect();
        let absent: Vec<usize> = (0..cfg.classes).filter(|c| !present.contains(c)).collect();
        let class_id = absent[audio_rng.gen_range(0..absent.len())];
        let audio = synth_audio(class_id, cfg, &ctx, &mut audio_rng);
        return Ok(AudioVisualPair {
            id,
            visual,
            audio,
            gt: Some(BinaryMap::zeros(cfg.map_res, cfg.map_res)),
            is_false_positive: true,
            split,
        });
    }
    let sounding = scene
        .sounding()
        .ok_or_else(|| crate::error::DmtError::World("genuine pair needs a sounding object".into()))?;
    let audio = synth_audio(sounding.class_id, cfg, &ctx, &mut audio_rng);
    Ok(AudioVisualPair {
        id,
        visual,
        audio,
        gt: Some(gt_map_of_box(&sounding.bbox, cfg)),
        is_false_positive: false,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::generate_scene;

    fn cfg() -> WorldConfig {
        WorldConfig::default()
    }

    #[test]
    fn full_canvas_box_gives_all_ones_gt() {
        let cfg = cfg();
        let bbox = super::super::BoxPx {
            x: 0,
            y: 0,
            w: cfg.canvas,
            h: cfg.canvas,
        };
        let gt = gt_map_of_box(&bbox, &cfg);
        assert_eq!(gt.count_ones(), cfg.map_res * cfg.map_res);
    }

    #[test]
    fn false_positive_pair_has_empty_gt_and_flag() {
        let cfg = cfg();
        let scene = generate_scene(&mut stream(3, Stream::Scene, 0), &cfg).unwrap();
        let pair = render_pair(&scene, &cfg, 3, SampleId(0), Split::Unlabeled, true).unwrap();
        assert!(pair.is_false_positive);
        assert!(pair.gt.as_ref().unwrap().is_empty_mask());
    }

    #[test]
    fn genuine_pair_has_nonempty_gt() {
        let cfg = cfg();
        let scene = generate_scene(&mut stream(4, Stream::Scene, 1), &cfg).unwrap();
        let pair = render_pair(&scene, &cfg, 4, SampleId(1), Split::Labeled, false).unwrap();
        assert!(!pair.is_false_positive);
        assert!(pair.gt.as_ref().unwrap().count_ones() > 0);
        assert!(pair.visual.is_finite());
        assert!(pair.audio.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn same_class_audio_is_more_similar_than_cross_class() {
        // Monte-Carlo correlation oracle over 1k draws
        let cfg = cfg();
        let ctx = RenderCtx {
            styles: class_styles(&cfg, 9),
            embeddings: class_embeddings(&cfg, 9),
        };
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut rng = stream(9, Stream::Audio, 12345);
        let mut same = 0.0;
        let mut diff = 0.0;
        let n = 1000;
        for _ in 0..n {
            let c1 = rng.gen_range(0..cfg.classes);
            let mut c2 = rng.gen_range(0..cfg.classes - 1);
            if c2 >= c1 {
                c2 += 1;
            }
            let a1 = synth_audio(c1, &cfg, &ctx, &mut rng);
            let a2 = synth_audio(c1, &cfg, &ctx, &mut rng);
            let b = synth_audio(c2, &cfg, &ctx, &mut rng);
            same += cos(&a1, &a2);
            diff += cos(&a1, &b);
        }
        same /= n as f64;
        diff /= n as f64;
        assert!(
            same - diff >= 0.3,
            "same-class cosine {same:.3} vs cross-class {diff:.3}"
        );
    }

    #[test]
    fn rendering_is_deterministic_and_quantized() {
        let cfg = cfg();
        let scene = generate_scene(&mut stream(5, Stream::Scene, 2), &cfg).unwrap();
        let a = render_pair(&scene, &cfg, 5, SampleId(2), Split::Test, false).unwrap();
        let b = render_pair(&scene, &cfg, 5, SampleId(2), Split::Test, false).unwrap();
        assert_eq!(a.visual.data(), b.visual.data());
        assert_eq!(a.audio, b.audio);
        for &v in a.visual.data() {
            let k = v * 255.0;
            assert!((k - k.round()).abs() < 1e-9, "value {v} off the 1/255 lattice");
        }
    }
}
