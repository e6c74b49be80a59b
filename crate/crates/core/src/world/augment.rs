//! Weak and strong augmentation.
//!
//! Geometric ops are stored as normalized-coordinate transforms so the same
//! spec applies to the canvas grid (bilinear) and to localization maps
//! (nearest-neighbor), and so teacher masks can be mapped back to canonical
//! coordinates through the inverse.

use crate::error::{DmtError, Result};
use crate::maps::BinaryMap;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugKind {
    Identity,
    Weak,
    Strong,
}

/// Geometric transform in normalized [0,1] coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum GeomOp {
    FlipH,
    /// Crop the window (x0, y0, w, h) and resize back to full resolution.
    CropResize { x0: f64, y0: f64, w: f64, h: f64 },
}

/// Photometric transform; never touches ground-truth maps.
#[derive(Debug, Clone, PartialEq)]
pub enum PhotoOp {
    Brightness(f64),
    Contrast(f64),
    AddNoise(f64),
    Cutout { x0: f64, y0: f64, w: f64, h: f64 },
    ChannelScale(Vec<f64>),
}

/// One sampled augmentation: an ordered geometric part plus photometrics.
#[derive(Debug, Clone)]
pub struct AugmentationSpec {
    pub kind: AugKind,
    pub geoms: Vec<GeomOp>,
    pub photos: Vec<PhotoOp>,
    /// Seed for the additive-noise draw, so application stays deterministic.
    pub noise_seed: u64,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec {
            kind: AugKind::Identity,
            geoms: Vec::new(),
            photos: Vec::new(),
            noise_seed: 0,
        }
    }

    /// Weak policy: crop-and-resize keeping at least 80% of the area, then
    /// a coin-flip horizontal flip.
    pub fn sample_weak(rng: &mut impl Rng) -> Self {
        let mut geoms = Vec::new();
        let area = rng.gen_range(0.8..=1.0);
        geoms.push(sample_crop(area, rng));
        if rng.gen_bool(0.5) {
            geoms.push(GeomOp::FlipH);
        }
        AugmentationSpec {
            kind: AugKind::Weak,
            geoms,
            photos: Vec::new(),
            noise_seed: rng.gen(),
        }
    }

    /// Strong policy: two distinct draws from {crop>=60%, flip,
    /// brightness/contrast jitter, additive noise, cutout, channel scaling}.
    pub fn sample_strong(rng: &mut impl Rng) -> Self {
        let mut choices = [0usize, 1, 2, 3, 4, 5];
        choices.shuffle(rng);
        let mut spec = AugmentationSpec {
            kind: AugKind::Strong,
            geoms: Vec::new(),
            photos: Vec::new(),
            noise_seed: rng.gen(),
        };
        for &op in choices.iter().take(2) {
            match op {
                0 => {
                    let area = rng.gen_range(0.6..=1.0);
                    spec.geoms.push(sample_crop(area, rng));
                }
                1 => spec.geoms.push(GeomOp::FlipH),
                2 => {
                    spec.photos.push(PhotoOp::Brightness(rng.gen_range(-0.25..0.25)));
                    spec.photos.push(PhotoOp::Contrast(rng.gen_range(0.7..1.3)));
                }
                3 => spec.photos.push(PhotoOp::AddNoise(rng.gen_range(0.02..0.08))),
                4 => {
                    let w = rng.gen_range(0.15..0.35);
                    let h = rng.gen_range(0.15..0.35);
                    spec.photos.push(PhotoOp::Cutout {
                        x0: rng.gen_range(0.0..1.0 - w),
                        y0: rng.gen_range(0.0..1.0 - h),
                        w,
                        h,
                    });
                }
                _ => {
                    spec.photos.push(PhotoOp::ChannelScale(vec![
                        rng.gen_range(0.7..1.3),
                        rng.gen_range(0.7..1.3),
                        rng.gen_range(0.7..1.3),
                    ]));
                }
            }
        }
        spec
    }
}

fn sample_crop(area: f64, rng: &mut impl Rng) -> GeomOp {
    let side = area.sqrt();
    let x0 = rng.gen_range(0.0..=1.0 - side);
    let y0 = rng.gen_range(0.0..=1.0 - side);
    GeomOp::CropResize {
        x0,
        y0,
        w: side,
        h: side,
    }
}

fn validate_geom(op: &GeomOp, map_res: usize) -> Result<()> {
    if let GeomOp::CropResize { x0, y0, w, h } = *op {
        let ok = w > 0.0
            && h > 0.0
            && x0 >= 0.0
            && y0 >= 0.0
            && x0 + w <= 1.0 + 1e-9
            && y0 + h <= 1.0 + 1e-9
            && w * map_res as f64 >= 1.0
            && h * map_res as f64 >= 1.0;
        if !ok {
            return Err(DmtError::domain(
                "augment",
                format!("degenerate crop window ({x0:.3},{y0:.3},{w:.3},{h:.3})"),
            ));
        }
    }
    Ok(())
}

fn bilinear_sample(data: &[f64], s: usize, ch: usize, x: f64, y: f64, c: usize) -> f64 {
    let x = x.clamp(0.0, (s - 1) as f64);
    let y = y.clamp(0.0, (s - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(s - 1);
    let y1 = (y0 + 1).min(s - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |yy: usize, xx: usize| data[(yy * s + xx) * ch + c];
    at(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + at(y0, x1) * fx * (1.0 - fy)
        + at(y1, x0) * (1.0 - fx) * fy
        + at(y1, x1) * fx * fy
}

fn apply_geom_visual(visual: &Tensor, op: &GeomOp) -> Tensor {
    let s = visual.shape()[0];
    let ch = visual.shape()[2];
    let src = visual.data();
    let mut out = vec![0.0; src.len()];
    match *op {
        GeomOp::FlipH => {
            for y in 0..s {
                for x in 0..s {
                    for c in 0..ch {
                        out[(y * s + x) * ch + c] = src[(y * s + (s - 1 - x)) * ch + c];
                    }
                }
            }
        }
        GeomOp::CropResize { x0, y0, w, h } => {
            for y in 0..s {
                for x in 0..s {
                    let u = (x as f64 + 0.5) / s as f64;
                    let v = (y as f64 + 0.5) / s as f64;
                    let sx = (x0 + u * w) * s as f64 - 0.5;
                    let sy = (y0 + v * h) * s as f64 - 0.5;
                    for c in 0..ch {
                        out[(y * s + x) * ch + c] = bilinear_sample(src, s, ch, sx, sy, c);
                    }
                }
            }
        }
    }
    Tensor::new(visual.shape().to_vec(), out).expect("geom shape")
}

fn apply_geom_map(map: &BinaryMap, op: &GeomOp) -> BinaryMap {
    let m = map.h();
    match *op {
        GeomOp::FlipH => BinaryMap::from_fn(m, m, |y, x| map.get(y, m - 1 - x)),
        GeomOp::CropResize { x0, y0, w, h } => BinaryMap::from_fn(m, m, |y, x| {
            let u = (x as f64 + 0.5) / m as f64;
            let v = (y as f64 + 0.5) / m as f64;
            let sx = ((x0 + u * w) * m as f64).floor() as isize;
            let sy = ((y0 + v * h) * m as f64).floor() as isize;
            let sx = sx.clamp(0, m as isize - 1) as usize;
            let sy = sy.clamp(0, m as isize - 1) as usize;
            map.get(sy, sx)
        }),
    }
}

fn apply_geom_map_inverse(map: &BinaryMap, op: &GeomOp) -> BinaryMap {
    let m = map.h();
    match *op {
        GeomOp::FlipH => BinaryMap::from_fn(m, m, |y, x| map.get(y, m - 1 - x)),
        GeomOp::CropResize { x0, y0, w, h } => BinaryMap::from_fn(m, m, |y, x| {
            // canonical cell center -> position inside the crop window
            let u = (x as f64 + 0.5) / m as f64;
            let v = (y as f64 + 0.5) / m as f64;
            let cu = (u - x0) / w;
            let cv = (v - y0) / h;
            if !(0.0..1.0).contains(&cu) || !(0.0..1.0).contains(&cv) {
                return false;
            }
            let sx = ((cu * m as f64).floor() as usize).min(m - 1);
            let sy = ((cv * m as f64).floor() as usize).min(m - 1);
            map.get(sy, sx)
        }),
    }
}

fn apply_photo(visual: &mut Tensor, op: &PhotoOp, noise_rng: &mut impl Rng) {
    let s = visual.shape()[0];
    let ch = visual.shape()[2];
    let data = visual.data_mut();
    match op {
        PhotoOp::Brightness(d) => data.iter_mut().for_each(|v| *v += d),
        PhotoOp::Contrast(f) => data.iter_mut().for_each(|v| *v = 0.5 + (*v - 0.5) * f),
        PhotoOp::AddNoise(sigma) => data
            .iter_mut()
            .for_each(|v| *v += sigma * noise_rng.sample::<f64, _>(StandardNormal)),
        PhotoOp::Cutout { x0, y0, w, h } => {
            let xa = (x0 * s as f64) as usize;
            let ya = (y0 * s as f64) as usize;
            let xb = (((x0 + w) * s as f64) as usize).min(s);
            let yb = (((y0 + h) * s as f64) as usize).min(s);
            for y in ya..yb {
                for x in xa..xb {
                    for c in 0..ch {
                        data[(y * s + x) * ch + c] = 0.0;
                    }
                }
            }
        }
        PhotoOp::ChannelScale(fs) => {
            for px in data.chunks_mut(ch) {
                for (v, f) in px.iter_mut().zip(fs) {
                    *v *= f;
                }
            }
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

/// Apply a spec to a visual grid and (optionally) its ground-truth map.
/// Geometry hits both identically (nearest-neighbor on the map); photometric
/// ops leave the map untouched.
pub fn augment(
    visual: &Tensor,
    gt: Option<&BinaryMap>,
    spec: &AugmentationSpec,
) -> Result<(Tensor, Option<BinaryMap>)> {
    let map_res = gt.map(|m| m.h()).unwrap_or(1);
    for op in &spec.geoms {
        validate_geom(op, map_res)?;
    }
    let mut vis = visual.clone();
    let mut map = gt.cloned();
    for op in &spec.geoms {
        vis = apply_geom_visual(&vis, op);
        map = map.map(|m| apply_geom_map(&m, op));
    }
    let mut noise_rng = stream(spec.noise_seed, Stream::Augment, 0);
    for op in &spec.photos {
        apply_photo(&mut vis, op, &mut noise_rng);
    }
    Ok((vis, map))
}

/// Forward-transform a map alone (used for pseudo-label geometry).
pub fn transform_map(map: &BinaryMap, geoms: &[GeomOp]) -> Result<BinaryMap> {
    for op in geoms {
        validate_geom(op, map.h())?;
    }
    let mut out = map.clone();
    for op in geoms {
        out = apply_geom_map(&out, op);
    }
    Ok(out)
}

/// Map a mask produced in augmented coordinates back to canonical
/// coordinates (inverse ops in reverse order; cells outside the crop
/// window come back as background).
pub fn inverse_transform_map(map: &BinaryMap, geoms: &[GeomOp]) -> Result<BinaryMap> {
    for op in geoms {
        validate_geom(op, map.h())?;
    }
    let mut out = map.clone();
    for op in geoms.iter().rev() {
        out = apply_geom_map_inverse(&out, op);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::world::{generate_scene, render_pair, SampleId, Split, WorldConfig};

    fn sample_pair() -> (Tensor, BinaryMap) {
        let cfg = WorldConfig::default();
        let scene = generate_scene(&mut stream(21, Stream::Scene, 0), &cfg).unwrap();
        let pair = render_pair(&scene, &cfg, 21, SampleId(0), Split::Labeled, false).unwrap();
        let gt = pair.gt.clone().unwrap();
        (pair.visual, gt)
    }

    #[test]
    fn identity_spec_is_a_no_op() {
        let (vis, gt) = sample_pair();
        let (v2, g2) = augment(&vis, Some(&gt), &AugmentationSpec::identity()).unwrap();
        assert_eq!(vis.data(), v2.data());
        assert_eq!(gt, g2.unwrap());
    }

    #[test]
    fn double_flip_restores_pixels_exactly() {
        let (vis, gt) = sample_pair();
        let spec = AugmentationSpec {
            kind: AugKind::Weak,
            geoms: vec![GeomOp::FlipH],
            photos: Vec::new(),
            noise_seed: 0,
        };
        let (v1, g1) = augment(&vis, Some(&gt), &spec).unwrap();
        let (v2, g2) = augment(&v1, g1.as_ref(), &spec).unwrap();
        assert_eq!(vis.data(), v2.data());
        assert_eq!(gt, g2.unwrap());
    }

    #[test]
    fn flip_moves_left_box_to_right_quarter() {
        // coordinate-arithmetic oracle: a box in x in [0, S/4) must land in
        // [3S/4, S) after a horizontal flip
        let cfg = WorldConfig::default();
        let m = cfg.map_res;
        let gt = BinaryMap::from_fn(m, m, |y, x| x < m / 4 && y >= 4 && y < 8);
        let flipped = transform_map(&gt, &[GeomOp::FlipH]).unwrap();
        for y in 0..m {
            for x in 0..m {
                let expect = x >= 3 * m / 4 && y >= 4 && y < 8;
                assert_eq!(flipped.get(y, x), expect, "cell ({y},{x})");
            }
        }
    }

    #[test]
    fn photometric_ops_leave_gt_unchanged() {
        let (vis, gt) = sample_pair();
        let spec = AugmentationSpec {
            kind: AugKind::Strong,
            geoms: Vec::new(),
            photos: vec![
                PhotoOp::Brightness(0.2),
                PhotoOp::Contrast(1.2),
                PhotoOp::AddNoise(0.05),
                PhotoOp::ChannelScale(vec![0.9, 1.1, 1.0]),
            ],
            noise_seed: 7,
        };
        let (v2, g2) = augment(&vis, Some(&gt), &spec).unwrap();
        assert_eq!(gt, g2.unwrap());
        assert_ne!(vis.data(), v2.data());
        assert!(v2.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn degenerate_crop_is_an_error() {
        let (vis, gt) = sample_pair();
        let spec = AugmentationSpec {
            kind: AugKind::Weak,
            geoms: vec![GeomOp::CropResize {
                x0: 0.5,
                y0: 0.5,
                w: 0.0,
                h: 0.4,
            }],
            photos: Vec::new(),
            noise_seed: 0,
        };
        assert!(augment(&vis, Some(&gt), &spec).is_err());
    }

    #[test]
    fn weak_spec_only_draws_crop_and_flip() {
        for i in 0..50 {
            let spec = AugmentationSpec::sample_weak(&mut stream(1, Stream::Augment, i));
            assert!(spec.photos.is_empty());
            assert!(spec.geoms.len() <= 2);
            for op in &spec.geoms {
                if let GeomOp::CropResize { w, h, .. } = op {
                    assert!(w * h >= 0.8 - 1e-9, "weak crop area {}", w * h);
                }
            }
        }
    }

    #[test]
    fn strong_spec_draws_two_ops() {
        for i in 0..50 {
            let spec = AugmentationSpec::sample_strong(&mut stream(2, Stream::Augment, i));
            let jitter_pairs = spec
                .photos
                .iter()
                .filter(|p| matches!(p, PhotoOp::Contrast(_)))
                .count();
            let n_ops = spec.geoms.len() + spec.photos.len() - jitter_pairs;
            assert_eq!(n_ops, 2, "spec {spec:?}");
        }
    }

    #[test]
    fn inverse_undoes_flip_exactly_and_crop_inside_window() {
        let (_, gt) = sample_pair();
        let flip = vec![GeomOp::FlipH];
        let fwd = transform_map(&gt, &flip).unwrap();
        let back = inverse_transform_map(&fwd, &flip).unwrap();
        assert_eq!(gt, back);
    }
}
