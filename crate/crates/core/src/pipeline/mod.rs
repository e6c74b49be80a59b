//! One audio-visual localization pipeline: a visual encoder producing a
//! feature grid, an audio encoder producing a matching embedding, the dense
//! cosine similarity map between them, and the two training losses.

mod encoder;
mod ops;

pub use encoder::{ArchTag, AudioEncoder, AvslNet, EncoderGeom, NetNodes, VisualEncoder};
pub use ops::{
    attention_pool, attention_pool_g, contrastive_loss, contrastive_loss_features_g,
    net_confidence_maps, predicted_map, predicted_map_g, supervised_map_loss,
    supervised_map_loss_g, LOGIT_SCALE,
};

use crate::error::{DmtError, Result};
use crate::maps::BinaryMap;
use crate::tensor::Tensor;

/// Stack per-sample visual grids (S,S,ch) into one (N,S,S,ch) batch.
pub fn stack_visuals(visuals: &[&Tensor]) -> Result<Tensor> {
    if visuals.is_empty() {
        return Err(DmtError::domain("stack_visuals", "empty batch"));
    }
    let shape = visuals[0].shape().to_vec();
    let mut data = Vec::with_capacity(visuals.len() * visuals[0].numel());
    for v in visuals {
        if v.shape() != shape.as_slice() {
            return Err(DmtError::ShapeMismatch {
                op: "stack_visuals",
                lhs: shape,
                rhs: v.shape().to_vec(),
            });
        }
        data.extend_from_slice(v.data());
    }
    let mut out_shape = vec![visuals.len()];
    out_shape.extend_from_slice(&shape);
    Tensor::new(out_shape, data)
}

/// Stack audio vectors into an (N,D) batch.
pub fn stack_audios(audios: &[&[f64]]) -> Result<Tensor> {
    if audios.is_empty() {
        return Err(DmtError::domain("stack_audios", "empty batch"));
    }
    let d = audios[0].len();
    let mut data = Vec::with_capacity(audios.len() * d);
    for a in audios {
        if a.len() != d {
            return Err(DmtError::ShapeMismatch {
                op: "stack_audios",
                lhs: vec![d],
                rhs: vec![a.len()],
            });
        }
        data.extend_from_slice(a);
    }
    Tensor::new(vec![audios.len(), d], data)
}

/// Stack binary maps into an (N,H,W) 0/1 float tensor.
pub fn stack_maps(maps: &[&BinaryMap]) -> Result<Tensor> {
    if maps.is_empty() {
        return Err(DmtError::domain("stack_maps", "empty batch"));
    }
    let (h, w) = (maps[0].h(), maps[0].w());
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        if m.h() != h || m.w() != w {
            return Err(DmtError::ShapeMismatch {
                op: "stack_maps",
                lhs: vec![h, w],
                rhs: vec![m.h(), m.w()],
            });
        }
        data.extend(m.data().iter().map(|&v| v as f64));
    }
    Tensor::new(vec![maps.len(), h, w], data)
}
