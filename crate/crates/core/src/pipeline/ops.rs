//! Similarity maps, attention pooling, and the two losses.

use super::encoder::NetNodes;
use super::{stack_audios, stack_visuals, AvslNet};
use crate::error::{DmtError, Result};
use crate::maps::{BinaryMap, ConfidenceMap};
use crate::tensor::{Graph, NodeId, Tensor};

/// Cosine-to-logit scale for the map cross-entropy: logit = (P - b) / s with
/// b = 0, s = 0.25, so a cosine of 0.6 sits at sigma(2.4) ~ 0.92 confidence.
pub const LOGIT_SCALE: f64 = 4.0;

/// Dense cosine map between per-sample audio features (N,E) and visual
/// feature grids (N,H,W,E): P(x,y) = <g_a, f_v(x,y)> / (|g_a| |f_v(x,y)|).
/// Zero-norm vectors produce similarity 0.
pub fn predicted_map_g(g: &mut Graph, audio_feat: NodeId, vis_feat: NodeId) -> Result<NodeId> {
    let vs = g.value(vis_feat).shape().to_vec();
    let as_ = g.value(audio_feat).shape().to_vec();
    if vs.len() != 4 || as_.len() != 2 || vs[0] != as_[0] || vs[3] != as_[1] {
        return Err(DmtError::ShapeMismatch {
            op: "predicted_map",
            lhs: as_,
            rhs: vs,
        });
    }
    let (n, h, w, e) = (vs[0], vs[1], vs[2], vs[3]);
    let an = g.l2_normalize(audio_feat, 1)?;
    let flat = g.reshape(vis_feat, &[n, h * w, e])?;
    let fn_ = g.l2_normalize(flat, 2)?;
    let a3 = g.reshape(an, &[n, e, 1])?;
    let p = g.matmul(fn_, a3, false, false)?; // (n, h*w, 1)
    g.reshape(p, &[n, h, w])
}

/// Softmax-attention pool of a feature grid by its confidence map:
/// weights = exp(P) / sum exp(P), output = sum w(x,y) f(x,y): (N,E).
pub fn attention_pool_g(g: &mut Graph, vis_feat: NodeId, pmap: NodeId) -> Result<NodeId> {
    let vs = g.value(vis_feat).shape().to_vec();
    let ps = g.value(pmap).shape().to_vec();
    if vs.len() != 4 || ps.len() != 3 || vs[0] != ps[0] || vs[1] != ps[1] || vs[2] != ps[2] {
        return Err(DmtError::ShapeMismatch {
            op: "attention_pool",
            lhs: vs,
            rhs: ps,
        });
    }
    let (n, h, w, e) = (vs[0], vs[1], vs[2], vs[3]);
    let flat_p = g.reshape(pmap, &[n, h * w])?;
    let weights = g.softmax(flat_p, 1)?;
    let w3 = g.reshape(weights, &[n, 1, h * w])?;
    let flat_f = g.reshape(vis_feat, &[n, h * w, e])?;
    let pooled = g.matmul(w3, flat_f, false, false)?; // (n, 1, e)
    g.reshape(pooled, &[n, e])
}

/// Symmetric InfoNCE over a batch of matched audio/visual features.
///
/// The match score is attention-pooled cosine similarity:
/// s(i, j) = cos(g_a_i, pool(f_v_j, P_ij)). Returns the mean over samples of
/// the two directional cross-entropy terms, halved.
pub fn contrastive_loss_features_g(
    g: &mut Graph,
    audio_feat: NodeId,
    vis_feat: NodeId,
    temperature: f64,
) -> Result<NodeId> {
    if temperature <= 0.0 {
        return Err(DmtError::domain("contrastive_loss", "temperature must be positive"));
    }
    let vs = g.value(vis_feat).shape().to_vec();
    let as_ = g.value(audio_feat).shape().to_vec();
    if vs.len() != 4 || as_.len() != 2 || vs[0] != as_[0] || vs[3] != as_[1] {
        return Err(DmtError::ShapeMismatch {
            op: "contrastive_loss",
            lhs: as_,
            rhs: vs,
        });
    }
    let n = vs[0];
    if n < 2 {
        return Err(DmtError::domain(
            "contrastive_loss",
            "batch must hold at least 2 pairs (no negatives otherwise)",
        ));
    }
    let (h, w, e) = (vs[1], vs[2], vs[3]);
    let an = g.l2_normalize(audio_feat, 1)?; // (n_a, e)
    let flat = g.reshape(vis_feat, &[n, h * w, e])?;
    let fn_ = g.l2_normalize(flat, 2)?;
    // all-pairs maps: maps[j, xy, i] = <f_j(xy), g_i>
    let maps = g.matmul(fn_, an, false, true)?; // (n_v, h*w, n_a)
    let weights = g.softmax(maps, 1)?;
    // pooled[j, i, :] = sum_xy w[j, xy, i] f_j(xy)
    let pooled = g.matmul(weights, flat, true, false)?; // (n_v, n_a, e)
    let pn = g.l2_normalize(pooled, 2)?;
    let prod = g.mul(pn, an)?; // broadcast (n_a, e) over (n_v, n_a, e)
    let scores = g.sum(prod, Some(2))?; // (n_v, n_a)
    let logits = g.scalar_mul(scores, 1.0 / temperature)?;
    // audio->visual: softmax over visual index (axis 0); visual->audio over
    // audio index (axis 1); positives on the diagonal
    let lsm_v = g.log_softmax(logits, 0)?;
    let lsm_a = g.log_softmax(logits, 1)?;
    let both = g.add(lsm_v, lsm_a)?;
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    let eye = g.constant(Tensor::new(vec![n, n], eye)?);
    let diag = g.mul(both, eye)?;
    let total = g.sum(diag, None)?;
    g.scalar_mul(total, -1.0 / (2.0 * n as f64))
}

/// Per-pixel binary cross-entropy between a binary target and
/// sigma(LOGIT_SCALE * P), averaged over all pixels in the batch.
pub fn supervised_map_loss_g(g: &mut Graph, pmap: NodeId, target: &Tensor) -> Result<NodeId> {
    let z = g.scalar_mul(pmap, LOGIT_SCALE)?;
    g.bce_with_logits(z, target)
}

// ---- plain (non-graph) wrappers used by inference and oracles ----------

/// Single-sample predicted map from raw features.
pub fn predicted_map(audio_feat: &[f64], vis_feat: &Tensor) -> Result<ConfidenceMap> {
    let vs = vis_feat.shape().to_vec();
    if vs.len() != 3 || vs[2] != audio_feat.len() {
        return Err(DmtError::ShapeMismatch {
            op: "predicted_map",
            lhs: vec![audio_feat.len()],
            rhs: vs,
        });
    }
    let (h, w, e) = (vs[0], vs[1], vs[2]);
    let na = audio_feat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut data = vec![0.0; h * w];
    for (cell, out) in vis_feat.data().chunks(e).zip(&mut data) {
        let nf = cell.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na <= 1e-12 || nf <= 1e-12 {
            *out = 0.0;
            continue;
        }
        let dot: f64 = cell.iter().zip(audio_feat).map(|(a, b)| a * b).sum();
        *out = dot / (na * nf);
    }
    ConfidenceMap::new(h, w, data)
}

/// Single-sample attention pool from raw features.
pub fn attention_pool(vis_feat: &Tensor, pmap: &ConfidenceMap) -> Result<Vec<f64>> {
    let vs = vis_feat.shape().to_vec();
    if vs.len() != 3 || vs[0] != pmap.h() || vs[1] != pmap.w() {
        return Err(DmtError::ShapeMismatch {
            op: "attention_pool",
            lhs: vs,
            rhs: vec![pmap.h(), pmap.w()],
        });
    }
    let e = vs[2];
    let mx = pmap.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = pmap.data().iter().map(|&v| (v - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut out = vec![0.0; e];
    for (cell, &wv) in vis_feat.data().chunks(e).zip(&exps) {
        for (o, &c) in out.iter_mut().zip(cell) {
            *o += c * wv / z;
        }
    }
    Ok(out)
}

/// Contrastive loss of a batch through a network (scalar value only).
pub fn contrastive_loss(
    net: &AvslNet,
    visuals: &[&Tensor],
    audios: &[&[f64]],
    temperature: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let v = stack_visuals(visuals)?;
    let a = stack_audios(audios)?;
    let vn = g.constant(v);
    let an = g.constant(a);
    let nodes: NetNodes = net.nodes(&mut g, false);
    let fv = nodes.forward_visual(&mut g, vn)?;
    let fa = nodes.forward_audio(&mut g, an)?;
    let loss = contrastive_loss_features_g(&mut g, fa, fv, temperature)?;
    Ok(g.value(loss).as_scalar().expect("scalar loss"))
}

/// Supervised map loss of one prediction against its binary target.
pub fn supervised_map_loss(pred: &ConfidenceMap, target: &BinaryMap) -> Result<f64> {
    if pred.h() != target.h() || pred.w() != target.w() {
        return Err(DmtError::ShapeMismatch {
            op: "supervised_map_loss",
            lhs: vec![pred.h(), pred.w()],
            rhs: vec![target.h(), target.w()],
        });
    }
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(vec![1, pred.h(), pred.w()], pred.data().to_vec())?);
    let t = Tensor::new(vec![1, target.h(), target.w()], target.to_f64())?;
    let loss = supervised_map_loss_g(&mut g, p, &t)?;
    Ok(g.value(loss).as_scalar().expect("scalar loss"))
}

/// Forward a batch of samples through one network and return per-sample
/// confidence maps. No gradients are recorded.
pub fn net_confidence_maps(
    net: &AvslNet,
    visuals: &[&Tensor],
    audios: &[&[f64]],
) -> Result<Vec<ConfidenceMap>> {
    let mut g = Graph::new();
    let v = stack_visuals(visuals)?;
    let a = stack_audios(audios)?;
    let vn = g.constant(v);
    let an = g.constant(a);
    let nodes = net.nodes(&mut g, false);
    let fv = nodes.forward_visual(&mut g, vn)?;
    let fa = nodes.forward_audio(&mut g, an)?;
    let maps = predicted_map_g(&mut g, fa, fv)?;
    let t = g.value(maps);
    let (n, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    (0..n)
        .map(|i| ConfidenceMap::new(h, w, t.data()[i * h * w..(i + 1) * h * w].to_vec()))
        .collect()
}
