//! Synthetic audio-visual world.
//!
//! Scenes are textured boxes on a textured background; the paired "audio"
//! is a per-class embedding plus isotropic noise. Everything is a pure
//! function of (seed, config, sample index).

mod augment;
mod io;
mod render;
mod scene;
mod splits;

pub use augment::{augment, inverse_transform_map, transform_map, AugKind, AugmentationSpec, GeomOp, PhotoOp};
pub use io::{export_splits, import_splits};
pub use render::{class_embeddings, render_pair};
pub use scene::generate_scene;
pub use splits::{make_splits, SplitSet};

use crate::error::{DmtError, Result};
use crate::maps::BinaryMap;
use crate::tensor::Tensor;

/// World geometry and sampling knobs. Canvas is `canvas` x `canvas` pixels
/// with `channels` color planes; localization maps are `map_res` square
/// (one cell per 2x2 pixel block).
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub canvas: usize,
    pub channels: usize,
    pub audio_dim: usize,
    pub classes: usize,
    pub map_res: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Sampling weights for (small, medium, large, huge) sounding objects.
    pub band_mix: [f64; 4],
    /// False-positive rate among unlabeled samples.
    pub fp_rate_unlabeled: f64,
    /// False-positive rate among test samples (0 unless a study needs it).
    pub fp_rate_test: f64,
    /// Std-dev of the isotropic noise added to unit-norm class embeddings.
    pub audio_noise: f64,
    pub n_unlabeled: usize,
    /// |D_l| = labeled_ratio * n_unlabeled.
    pub labeled_ratio: f64,
    pub n_val: usize,
    pub n_test: usize,
    /// Upper bound on the total number of generated samples.
    pub universe: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            canvas: 32,
            channels: 3,
            audio_dim: 16,
            classes: 8,
            map_res: 16,
            min_objects: 1,
            max_objects: 3,
            band_mix: [0.05, 0.30, 0.40, 0.25],
            fp_rate_unlabeled: 0.2,
            fp_rate_test: 0.0,
            audio_noise: 0.3,
            n_unlabeled: 4000,
            labeled_ratio: 0.1,
            n_val: 200,
            n_test: 500,
            universe: 65_536,
        }
    }
}

impl WorldConfig {
    pub fn n_labeled(&self) -> usize {
        (self.labeled_ratio * self.n_unlabeled as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas == 0 || self.canvas != 2 * self.map_res {
            return Err(DmtError::config(
                "canvas",
                format!("canvas {} must be twice map_res {}", self.canvas, self.map_res),
            ));
        }
        if self.channels != 3 {
            return Err(DmtError::config("channels", "renderer is fixed at 3 channels"));
        }
        if self.classes < 2 {
            return Err(DmtError::config("classes", "need at least 2 classes"));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(DmtError::config("min_objects", "need 1 <= min <= max objects"));
        }
        if self.band_mix.iter().any(|&w| w < 0.0) || self.band_mix.iter().sum::<f64>() <= 0.0 {
            return Err(DmtError::config("band_mix", "weights must be non-negative, not all zero"));
        }
        for (key, rate) in [
            ("fp_rate_unlabeled", self.fp_rate_unlabeled),
            ("fp_rate_test", self.fp_rate_test),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(DmtError::config(key, "rate must be in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.labeled_ratio) {
            return Err(DmtError::config("labeled_ratio", "ratio must be in [0, 1]"));
        }
        if self.n_labeled() == 0 {
            return Err(DmtError::config("labeled_ratio", "labeled split is empty"));
        }
        let total = self.n_labeled() + self.n_unlabeled + self.n_val + self.n_test;
        if total > self.universe {
            return Err(DmtError::config(
                "universe",
                format!("splits need {} samples, universe holds {}", total, self.universe),
            ));
        }
        Ok(())
    }
}

/// Object size bands, scaled from pixel-area bands on a 224-canvas:
/// small 1-32^2, medium 32^2-96^2, large 96^2-144^2, huge 144^2-224^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SizeBand {
    Small,
    Medium,
    Large,
    Huge,
}

impl SizeBand {
    pub const ALL: [SizeBand; 4] = [SizeBand::Small, SizeBand::Medium, SizeBand::Large, SizeBand::Huge];

    pub fn name(self) -> &'static str {
        match self {
            SizeBand::Small => "small",
            SizeBand::Medium => "medium",
            SizeBand::Large => "large",
            SizeBand::Huge => "huge",
        }
    }

    /// Band edges in canvas pixels, proportional to the reference bands.
    pub fn area_bounds(self, canvas: usize) -> (f64, f64) {
        let scale = canvas as f64 / 224.0;
        let edge = |px: f64| (px * scale).powi(2);
        match self {
            SizeBand::Small => (0.0, edge(32.0)),
            SizeBand::Medium => (edge(32.0), edge(96.0)),
            SizeBand::Large => (edge(96.0), edge(144.0)),
            SizeBand::Huge => (edge(144.0), edge(224.0)),
        }
    }

    pub fn of_area(area: usize, canvas: usize) -> SizeBand {
        let a = area as f64;
        for band in SizeBand::ALL {
            let (lo, hi) = band.area_bounds(canvas);
            if a > lo && a <= hi {
                return band;
            }
        }
        if a <= 1.0 {
            SizeBand::Small
        } else {
            SizeBand::Huge
        }
    }
}

/// Axis-aligned box in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxPx {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoxPx {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    fn overlaps(&self, other: &BoxPx) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

#[derive(Debug, Clone)]
pub struct SceneObject {
    pub class_id: usize,
    pub bbox: BoxPx,
    pub appearance_seed: u64,
    pub sounding: bool,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub canvas: usize,
    pub objects: Vec<SceneObject>,
    pub background_seed: u64,
}

impl Scene {
    pub fn sounding(&self) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.sounding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Labeled,
    Unlabeled,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Split> {
        match s {
            "labeled" => Some(Split::Labeled),
            "unlabeled" => Some(Split::Unlabeled),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One synthetic sample. Ground truth is present only on labeled, val and
/// test samples; unlabeled ground truth lives in `PairRecord::hidden_gt`
/// for instrumentation.
#[derive(Debug, Clone)]
pub struct AudioVisualPair {
    pub id: SampleId,
    /// (canvas, canvas, channels) grid, values on the 1/255 lattice.
    pub visual: Tensor,
    pub audio: Vec<f64>,
    pub gt: Option<BinaryMap>,
    pub is_false_positive: bool,
    pub split: Split,
}

/// Pair plus generation metadata the trainer must not see.
#[derive(Debug, Clone)]
pub struct PairRecord {
    pub pair: AudioVisualPair,
    pub class_id: Option<usize>,
    pub bbox: Option<BoxPx>,
    pub band: Option<SizeBand>,
    /// Ground truth for unlabeled samples, used only by diagnostics.
    pub hidden_gt: Option<BinaryMap>,
}
