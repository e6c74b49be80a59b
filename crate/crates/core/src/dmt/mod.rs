//! The dual mean-teacher algorithm: warm-up, consensus filtering,
//! intersection pseudo-labels, mixed-batch student training, EMA teachers,
//! and fused inference.

mod filter;
mod infer;
mod trainer;

pub use filter::{binarize, make_ipl, map_iou, noise_filter, DualMasks, FilterOutcome, PseudoLabel};
pub use infer::{eval_maps, infer_fused, EvalNets};
pub use trainer::{
    build_mixed, ema_update, run_unbiased_stage, sample_mixed_batch, student_full_loss,
    student_step, warm_up, EpochRow, MixedItem, StageOptions, StepBatches, StudentLossGraph,
    TeacherMode, WarmupStats,
};

use crate::error::{DmtError, Result};
use crate::pipeline::{ArchTag, AvslNet, EncoderGeom};
use crate::tensor::AdamState;

/// Every hyperparameter the algorithm names.
#[derive(Debug, Clone, PartialEq)]
pub struct DmtConfig {
    /// Foreground threshold for binarizing confidence maps.
    pub delta: f64,
    /// Consensus IoU threshold for accepting an unlabeled sample.
    pub tau: f64,
    /// EMA decay for teacher updates.
    pub beta: f64,
    /// Weight of the contrastive loss.
    pub lambda_u: f64,
    /// Contrastive temperature.
    pub temperature: f64,
    /// Adam learning rate.
    pub lr: f64,
    pub warmup_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
}

impl Default for DmtConfig {
    fn default() -> Self {
        DmtConfig {
            delta: 0.6,
            tau: 0.7,
            beta: 0.999,
            lambda_u: 1.0,
            temperature: 0.07,
            lr: 1e-3,
            warmup_epochs: 6,
            stage2_epochs: 20,
            batch_size: 32,
        }
    }
}

impl DmtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0 < self.delta && self.delta < 1.0) {
            return Err(DmtError::config("delta", "must lie in (-1, 1)"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(DmtError::config("tau", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(DmtError::config("beta", "must lie in [0, 1]"));
        }
        if self.lambda_u < 0.0 {
            return Err(DmtError::config("lambda_u", "must be non-negative"));
        }
        if self.temperature <= 0.0 {
            return Err(DmtError::config("temperature", "must be positive"));
        }
        if self.lr <= 0.0 {
            return Err(DmtError::config("lr", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(DmtError::config("batch", "contrastive batches need >= 2 samples"));
        }
        Ok(())
    }
}

/// The four networks of the framework plus the students' optimizer states.
/// Teachers are never registered as trainable, so gradients cannot reach
/// them; they move only through [`ema_update`].
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub student_a: AvslNet,
    pub student_b: AvslNet,
    pub teacher_a: AvslNet,
    pub teacher_b: AvslNet,
    pub adam_a: AdamState,
    pub adam_b: AdamState,
    pub epoch: usize,
}

impl ModelBundle {
    /// Random init. Heterogeneous bundles use both architectures; the
    /// homogeneous ablation shares widths but re-seeds pipeline B.
    pub fn init(geom: EncoderGeom, seed: u64, cfg: &DmtConfig, heterogeneous: bool) -> Result<Self> {
        cfg.validate()?;
        let teacher_a = AvslNet::init(ArchTag::A, geom, seed);
        let teacher_b = if heterogeneous {
            AvslNet::init(ArchTag::B, geom, seed)
        } else {
            AvslNet::init_salted(ArchTag::A, geom, seed, 0xb00)
        };
        let student_a = teacher_a.clone();
        let student_b = teacher_b.clone();
        let adam_a = AdamState::new(&student_a.params(), cfg.lr)?;
        let adam_b = AdamState::new(&student_b.params(), cfg.lr)?;
        Ok(ModelBundle {
            student_a,
            student_b,
            teacher_a,
            teacher_b,
            adam_a,
            adam_b,
            epoch: 0,
        })
    }

    /// Teacher/student pairs as (teacher, student) tuples.
    pub fn pairs(&self) -> [(&AvslNet, &AvslNet); 2] {
        [
            (&self.teacher_a, &self.student_a),
            (&self.teacher_b, &self.student_b),
        ]
    }
}
