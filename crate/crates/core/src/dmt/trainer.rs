//! Warm-up and unbiased-learning stages.

use super::filter::{apply_consensus, dual_teacher_masks, map_iou, FilterOutcome};
use super::infer::{eval_maps, EvalNets};
use super::{DmtConfig, ModelBundle};
use crate::error::{DmtError, Result};
use crate::maps::BinaryMap;
use crate::metrics::{auc, ciou, map_mse, sample_iou, EVAL_DELTA};
use crate::pipeline::{
    contrastive_loss_features_g, stack_audios, stack_maps, stack_visuals, supervised_map_loss_g,
    AvslNet, NetNodes,
};
use crate::rng::{stream, stream2, Stream};
use crate::tensor::{AdamState, Graph, Tensor};
use crate::world::{augment, AugmentationSpec, PairRecord, SplitSet};
use rand::seq::SliceRandom;

/// Which teacher-student pairs participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherMode {
    Dual,
    /// Single pair: no consensus filter, no intersection; the teacher's own
    /// mask is the pseudo-label (the classic self-training baseline).
    Single,
}

/// Ablation switches for the unbiased stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageOptions {
    pub filter_enabled: bool,
    pub ipl_enabled: bool,
    pub ema_enabled: bool,
    pub teacher_mode: TeacherMode,
}

impl Default for StageOptions {
    fn default() -> Self {
        StageOptions {
            filter_enabled: true,
            ipl_enabled: true,
            ema_enabled: true,
            teacher_mode: TeacherMode::Dual,
        }
    }
}

impl StageOptions {
    /// Networks evaluation should read: EMA keeps teachers fresh, so report
    /// fused teachers; without EMA the teachers are stale and the students
    /// carry the result.
    pub fn eval_nets<'a>(&self, bundle: &'a ModelBundle) -> EvalNets<'a> {
        match (self.teacher_mode, self.ema_enabled) {
            (TeacherMode::Dual, true) => EvalNets::Fused(&bundle.teacher_a, &bundle.teacher_b),
            (TeacherMode::Dual, false) => EvalNets::Fused(&bundle.student_a, &bundle.student_b),
            (TeacherMode::Single, true) => EvalNets::Single(&bundle.teacher_a),
            (TeacherMode::Single, false) => EvalNets::Single(&bundle.student_a),
        }
    }
}

/// Per-epoch warm-up record.
#[derive(Debug, Clone)]
pub struct WarmupStats {
    pub epoch_losses: Vec<f64>,
}

fn strong_view(
    record: &PairRecord,
    target: &BinaryMap,
    seed: u64,
    epoch: u64,
    salt: u64,
) -> Result<(Tensor, BinaryMap)> {
    let mut rng = stream2(seed, Stream::Augment, epoch, record.pair.id.0 ^ salt);
    let spec = AugmentationSpec::sample_strong(&mut rng);
    let (vis, gt) = augment(&record.pair.visual, Some(target), &spec)?;
    Ok((vis, gt.expect("target passed in")))
}

fn strong_view_no_target(
    record: &PairRecord,
    seed: u64,
    epoch: u64,
    salt: u64,
) -> Result<Tensor> {
    let mut rng = stream2(seed, Stream::Augment, epoch, record.pair.id.0 ^ salt);
    let spec = AugmentationSpec::sample_strong(&mut rng);
    let (vis, _) = augment(&record.pair.visual, None, &spec)?;
    Ok(vis)
}

/// Supervised map loss for one net on a batch of records with targets.
fn supervised_pair_loss(
    g: &mut Graph,
    nodes: &NetNodes,
    records: &[&PairRecord],
    targets: &[&BinaryMap],
    seed: u64,
    epoch: u64,
    salt: u64,
) -> Result<crate::tensor::NodeId> {
    let mut views = Vec::with_capacity(records.len());
    let mut maps = Vec::with_capacity(records.len());
    for (r, t) in records.iter().zip(targets) {
        let (vis, gt) = strong_view(r, t, seed, epoch, salt)?;
        views.push(vis);
        maps.push(gt);
    }
    let vis_refs: Vec<&Tensor> = views.iter().collect();
    let aud_refs: Vec<&[f64]> = records.iter().map(|r| r.pair.audio.as_slice()).collect();
    let map_refs: Vec<&BinaryMap> = maps.iter().collect();
    let v = stack_visuals(&vis_refs)?;
    let a = stack_audios(&aud_refs)?;
    let t = stack_maps(&map_refs)?;
    let vn = g.constant(v);
    let an = g.constant(a);
    let fv = nodes.forward_visual(g, vn)?;
    let fa = nodes.forward_audio(g, an)?;
    let pmap = crate::pipeline::predicted_map_g(g, fa, fv)?;
    supervised_map_loss_g(g, pmap, &t)
}

/// Contrastive loss for one net on a batch of unlabeled records.
fn contrastive_pair_loss(
    g: &mut Graph,
    nodes: &NetNodes,
    records: &[&PairRecord],
    cfg: &DmtConfig,
    seed: u64,
    epoch: u64,
    salt: u64,
) -> Result<crate::tensor::NodeId> {
    let mut views = Vec::with_capacity(records.len());
    for r in records {
        views.push(strong_view_no_target(r, seed, epoch, salt)?);
    }
    let vis_refs: Vec<&Tensor> = views.iter().collect();
    let aud_refs: Vec<&[f64]> = records.iter().map(|r| r.pair.audio.as_slice()).collect();
    let v = stack_visuals(&vis_refs)?;
    let a = stack_audios(&aud_refs)?;
    let vn = g.constant(v);
    let an = g.constant(a);
    let fv = nodes.forward_visual(g, vn)?;
    let fa = nodes.forward_audio(g, an)?;
    contrastive_loss_features_g(g, fa, fv, cfg.temperature)
}

fn take_grads(g: &Graph, nodes: &NetNodes, net: &AvslNet) -> Vec<Tensor> {
    nodes
        .ids
        .iter()
        .zip(net.params())
        .map(|(&id, p)| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect()
}

/// Supervised pre-training of the teachers on strongly augmented labeled
/// data. Students come out as copies of their teachers and the bundle's
/// Adam states are re-initialized for stage 2.
pub fn warm_up(
    bundle: &mut ModelBundle,
    d_l: &[PairRecord],
    cfg: &DmtConfig,
    options: &StageOptions,
    seed: u64,
) -> Result<WarmupStats> {
    cfg.validate()?;
    if d_l.is_empty() {
        return Err(DmtError::domain("warm_up", "labeled split is empty"));
    }
    let dual = options.teacher_mode == TeacherMode::Dual;
    let mut adam_a = AdamState::new(&bundle.teacher_a.params(), cfg.lr)?;
    let mut adam_b = AdamState::new(&bundle.teacher_b.params(), cfg.lr)?;
    let mut epoch_losses = Vec::with_capacity(cfg.warmup_epochs);

    for epoch in 0..cfg.warmup_epochs {
        let mut order: Vec<usize> = (0..d_l.len()).collect();
        order.shuffle(&mut stream2(seed, Stream::Batch, 0xaa, epoch as u64));
        let mut loss_acc = 0.0;
        let mut n_batches = 0usize;
        for batch_ids in order.chunks(cfg.batch_size) {
            let records: Vec<&PairRecord> = batch_ids.iter().map(|&i| &d_l[i]).collect();
            let targets: Vec<&BinaryMap> = records
                .iter()
                .map(|r| r.pair.gt.as_ref().expect("labeled record has gt"))
                .collect();
            let mut g = Graph::new();
            let nodes_a = bundle.teacher_a.nodes(&mut g, true);
            let loss_a =
                supervised_pair_loss(&mut g, &nodes_a, &records, &targets, seed, epoch as u64, 0xa1)?;
            let loss = if dual {
                let nodes_b = bundle.teacher_b.nodes(&mut g, true);
                let loss_b = supervised_pair_loss(
                    &mut g, &nodes_b, &records, &targets, seed, epoch as u64, 0xb1,
                )?;
                let total = g.add(loss_a, loss_b)?;
                g.backward(total)?;
                let ga = take_grads(&g, &nodes_a, &bundle.teacher_a);
                adam_a.apply(&mut bundle.teacher_a.params_mut(), &ga)?;
                let gb = take_grads(&g, &nodes_b, &bundle.teacher_b);
                adam_b.apply(&mut bundle.teacher_b.params_mut(), &gb)?;
                g.value(total).as_scalar().unwrap() / 2.0
            } else {
                g.backward(loss_a)?;
                let ga = take_grads(&g, &nodes_a, &bundle.teacher_a);
                adam_a.apply(&mut bundle.teacher_a.params_mut(), &ga)?;
                g.value(loss_a).as_scalar().unwrap()
            };
            if !loss.is_finite() {
                return Err(DmtError::Diverged {
                    epoch,
                    step: n_batches,
                    msg: "non-finite warm-up loss".into(),
                });
            }
            loss_acc += loss;
            n_batches += 1;
        }
        epoch_losses.push(loss_acc / n_batches.max(1) as f64);
    }

    bundle.student_a.copy_params_from(&bundle.teacher_a);
    bundle.student_b.copy_params_from(&bundle.teacher_b);
    bundle.adam_a = AdamState::new(&bundle.student_a.params(), cfg.lr)?;
    bundle.adam_b = AdamState::new(&bundle.student_b.params(), cfg.lr)?;
    Ok(WarmupStats { epoch_losses })
}

/// One element of the mixed dataset: a record index plus exactly one target.
#[derive(Debug, Clone)]
pub struct MixedItem {
    pub labeled: bool,
    pub index: usize,
    pub target: BinaryMap,
}

/// Union of the labeled split and the accepted pseudo-labeled samples.
/// Every item carries exactly one target map and a provenance flag.
pub fn build_mixed(d_l: &[PairRecord], outcome: &FilterOutcome) -> Result<Vec<MixedItem>> {
    let mut mixed = Vec::with_capacity(d_l.len() + outcome.accepted.len());
    for (i, r) in d_l.iter().enumerate() {
        let gt = r.pair.gt.as_ref().ok_or_else(|| {
            DmtError::domain("build_mixed", format!("labeled sample {i} is missing ground truth"))
        })?;
        mixed.push(MixedItem {
            labeled: true,
            index: i,
            target: gt.clone(),
        });
    }
    for p in &outcome.accepted {
        if p.label.is_empty_mask() {
            return Err(DmtError::domain(
                "build_mixed",
                format!("pseudo-labeled sample {} has an empty target", p.index),
            ));
        }
        mixed.push(MixedItem {
            labeled: false,
            index: p.index,
            target: p.label.clone(),
        });
    }
    Ok(mixed)
}

/// The two batches a student step consumes.
pub struct StepBatches<'a> {
    /// (record, target) drawn from the mixed pool.
    pub mix: Vec<(&'a PairRecord, &'a BinaryMap)>,
    /// Unlabeled records for the contrastive term.
    pub unsup: Vec<&'a PairRecord>,
}

/// The full student loss graph for one step:
/// L_full = (L_sup_A + L_sup_B) + lambda_u (L_unsup_A + L_unsup_B).
/// Exposed so oracles can finite-difference the whole objective.
pub struct StudentLossGraph {
    pub graph: Graph,
    pub total: crate::tensor::NodeId,
    pub sup_value: f64,
    pub unsup_value: f64,
    pub nodes_a: NetNodes,
    pub nodes_b: Option<NetNodes>,
}

/// Build (without stepping) the full loss for the students on the given
/// batches. Augmentation draws are a pure function of (seed, epoch, ids).
pub fn student_full_loss(
    student_a: &AvslNet,
    student_b: Option<&AvslNet>,
    batches: &StepBatches,
    cfg: &DmtConfig,
    seed: u64,
    epoch: u64,
) -> Result<StudentLossGraph> {
    if batches.mix.is_empty() {
        return Err(DmtError::domain("student_step", "empty mixed batch"));
    }
    let use_unsup = cfg.lambda_u > 0.0 && batches.unsup.len() >= 2;
    let mix_records: Vec<&PairRecord> = batches.mix.iter().map(|(r, _)| *r).collect();
    let mix_targets: Vec<&BinaryMap> = batches.mix.iter().map(|(_, t)| *t).collect();

    let mut g = Graph::new();
    let nodes_a = student_a.nodes(&mut g, true);
    let mut sup = supervised_pair_loss(
        &mut g, &nodes_a, &mix_records, &mix_targets, seed, epoch, 0x51a,
    )?;
    let nodes_b = match student_b {
        Some(net) => {
            let nodes_b = net.nodes(&mut g, true);
            let sup_b = supervised_pair_loss(
                &mut g, &nodes_b, &mix_records, &mix_targets, seed, epoch, 0x51b,
            )?;
            sup = g.add(sup, sup_b)?;
            Some(nodes_b)
        }
        None => None,
    };

    let mut total = sup;
    let mut unsup_value = 0.0;
    if use_unsup {
        let mut unsup = contrastive_pair_loss(
            &mut g, &nodes_a, &batches.unsup, cfg, seed, epoch, 0xc1a,
        )?;
        if let Some(ref nodes_b) = nodes_b {
            let u_b = contrastive_pair_loss(
                &mut g, nodes_b, &batches.unsup, cfg, seed, epoch, 0xc1b,
            )?;
            unsup = g.add(unsup, u_b)?;
        }
        unsup_value = g.value(unsup).as_scalar().unwrap();
        let weighted = g.scalar_mul(unsup, cfg.lambda_u)?;
        total = g.add(total, weighted)?;
    }
    let sup_value = g.value(sup).as_scalar().unwrap();
    Ok(StudentLossGraph {
        graph: g,
        total,
        sup_value,
        unsup_value,
        nodes_a,
        nodes_b,
    })
}

/// One optimizer step for both students on a mixed batch plus an unlabeled
/// batch. Teachers are never touched. Returns (loss_sup, loss_unsup) summed
/// over the participating students.
pub fn student_step(
    bundle: &mut ModelBundle,
    batches: &StepBatches,
    cfg: &DmtConfig,
    options: &StageOptions,
    seed: u64,
    epoch: u64,
) -> Result<(f64, f64)> {
    let dual = options.teacher_mode == TeacherMode::Dual;
    let student_b = dual.then_some(&bundle.student_b);
    let mut built = student_full_loss(&bundle.student_a, student_b, batches, cfg, seed, epoch)?;
    let total_value = built.graph.value(built.total).as_scalar().unwrap();
    if !total_value.is_finite() {
        return Err(DmtError::domain("student_step", "non-finite loss"));
    }
    built.graph.backward(built.total)?;

    let ga = take_grads(&built.graph, &built.nodes_a, &bundle.student_a);
    bundle.adam_a.apply(&mut bundle.student_a.params_mut(), &ga)?;
    if let Some(ref nodes_b) = built.nodes_b {
        let gb = take_grads(&built.graph, nodes_b, &bundle.student_b);
        bundle.adam_b.apply(&mut bundle.student_b.params_mut(), &gb)?;
    }
    Ok((built.sup_value, built.unsup_value))
}

/// EMA teacher update: theta_t <- beta * theta_t + (1 - beta) * theta_s,
/// parameter-wise per pair. Students are untouched.
pub fn ema_update(bundle: &mut ModelBundle, beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(DmtError::config("beta", "must lie in [0, 1]"));
    }
    for (teacher, student) in [
        (&mut bundle.teacher_a, &bundle.student_a),
        (&mut bundle.teacher_b, &bundle.student_b),
    ] {
        let student_params = student.params();
        for (t, s) in teacher.params_mut().into_iter().zip(student_params) {
            if t.shape() != s.shape() {
                return Err(DmtError::ShapeMismatch {
                    op: "ema_update",
                    lhs: t.shape().to_vec(),
                    rhs: s.shape().to_vec(),
                });
            }
            for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
                *tv = beta * *tv + (1.0 - beta) * sv;
            }
        }
    }
    Ok(())
}

/// One row of the per-epoch trace.
#[derive(Debug, Clone, Copy)]
pub struct EpochRow {
    pub epoch: usize,
    pub ciou_val: f64,
    pub auc_val: f64,
    pub mse_val: f64,
    pub n_accepted: usize,
    pub ipl_quality: f64,
    pub fp_accept_rate: f64,
    pub loss_sup: f64,
    pub loss_unsup: f64,
}

impl EpochRow {
    pub const CSV_HEADER: &'static str =
        "epoch,ciou_val,auc_val,mse_val,n_accepted,ipl_quality,fp_accept_rate,loss_sup,loss_unsup";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch,
            self.ciou_val,
            self.auc_val,
            self.mse_val,
            self.n_accepted,
            self.ipl_quality,
            self.fp_accept_rate,
            self.loss_sup,
            self.loss_unsup
        )
    }
}

/// Mean IoU between pseudo-labels and hidden ground truth over genuine
/// samples of the given index set.
fn pseudo_quality(records: &[PairRecord], labels: &[(usize, &BinaryMap)]) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for &(idx, label) in labels {
        let r = &records[idx];
        if r.pair.is_false_positive {
            continue;
        }
        if let Some(gt) = &r.hidden_gt {
            acc += map_iou(label, gt).unwrap_or(0.0);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

fn val_metrics(
    bundle: &ModelBundle,
    options: &StageOptions,
    records: &[PairRecord],
) -> Result<(f64, f64, f64)> {
    let maps = eval_maps(options.eval_nets(bundle), records)?;
    let mut ious = Vec::with_capacity(records.len());
    let mut mse_acc = 0.0;
    for (r, map) in records.iter().zip(&maps) {
        let gt = r.pair.gt.as_ref().expect("val record has gt");
        let norm = map.min_max_normalized();
        ious.push(sample_iou(&norm, gt, EVAL_DELTA)?);
        mse_acc += map_mse(&norm, gt)?;
    }
    Ok((
        ciou(&ious, 0.5)?,
        auc(&ious)?,
        mse_acc / records.len().max(1) as f64,
    ))
}

/// The unbiased-learning stage: per epoch, refresh the consensus filter and
/// pseudo-labels with the current teachers, run student steps over the
/// mixed pool (EMA after every step), and record the trace.
pub fn run_unbiased_stage(
    bundle: &mut ModelBundle,
    splits: &SplitSet,
    cfg: &DmtConfig,
    options: &StageOptions,
    seed: u64,
) -> Result<Vec<EpochRow>> {
    cfg.validate()?;
    let d_l = &splits.labeled;
    let d_u = &splits.unlabeled;
    let mut trace = Vec::with_capacity(cfg.stage2_epochs);

    for epoch in 0..cfg.stage2_epochs {
        bundle.epoch = epoch;
        // refresh pseudo-labels with the current teachers
        let outcome = match options.teacher_mode {
            TeacherMode::Dual => {
                let masks = dual_teacher_masks(
                    d_u,
                    &bundle.teacher_a,
                    &bundle.teacher_b,
                    cfg,
                    seed,
                    epoch as u64,
                )?;
                apply_consensus(masks, cfg.tau, options.filter_enabled, options.ipl_enabled)
            }
            TeacherMode::Single => {
                let masks = dual_teacher_masks(
                    d_u,
                    &bundle.teacher_a,
                    &bundle.teacher_a,
                    cfg,
                    seed,
                    epoch as u64,
                )?;
                // one teacher: its own mask is the label, nothing to filter
                apply_consensus(masks, cfg.tau, false, false)
            }
        };
        let mixed = build_mixed(d_l, &outcome)?;

        // diagnostics on the accepted set
        let accepted_labels: Vec<(usize, &BinaryMap)> = outcome
            .accepted
            .iter()
            .map(|p| (p.index, &p.label))
            .collect();
        let ipl_quality = pseudo_quality(d_u, &accepted_labels);
        let n_fp = d_u.iter().filter(|r| r.pair.is_false_positive).count();
        let fp_accepted = outcome
            .accepted
            .iter()
            .filter(|p| d_u[p.index].pair.is_false_positive)
            .count();
        let fp_accept_rate = if n_fp == 0 {
            0.0
        } else {
            fp_accepted as f64 / n_fp as f64
        };

        // student updates over the mixed pool
        let mut order: Vec<usize> = (0..mixed.len()).collect();
        order.shuffle(&mut stream2(seed, Stream::Batch, 1, epoch as u64));
        let mut unsup_order: Vec<usize> = (0..d_u.len()).collect();
        unsup_order.shuffle(&mut stream2(seed, Stream::Batch, 2, epoch as u64));
        let mut unsup_cursor = 0usize;
        let mut sup_acc = 0.0;
        let mut unsup_acc = 0.0;
        let mut steps = 0usize;
        for batch_ids in order.chunks(cfg.batch_size) {
            let mix: Vec<(&PairRecord, &BinaryMap)> = batch_ids
                .iter()
                .map(|&mi| {
                    let item = &mixed[mi];
                    let record = if item.labeled { &d_l[item.index] } else { &d_u[item.index] };
                    (record, &item.target)
                })
                .collect();
            let mut unsup = Vec::with_capacity(cfg.batch_size);
            if !d_u.is_empty() {
                for _ in 0..cfg.batch_size.min(d_u.len()) {
                    unsup.push(&d_u[unsup_order[unsup_cursor % d_u.len()]]);
                    unsup_cursor += 1;
                }
            }
            let (ls, lu) = student_step(
                bundle,
                &StepBatches { mix, unsup },
                cfg,
                options,
                seed,
                epoch as u64,
            )
            .map_err(|e| match e {
                DmtError::Domain { op: "student_step", msg } => DmtError::Diverged {
                    epoch,
                    step: steps,
                    msg,
                },
                other => other,
            })?;
            sup_acc += ls;
            unsup_acc += lu;
            steps += 1;
            if options.ema_enabled {
                ema_update(bundle, cfg.beta)?;
            }
        }

        let (ciou_val, auc_val, mse_val) = val_metrics(bundle, options, &splits.val)?;
        trace.push(EpochRow {
            epoch,
            ciou_val,
            auc_val,
            mse_val,
            n_accepted: outcome.accepted.len(),
            ipl_quality,
            fp_accept_rate,
            loss_sup: sup_acc / steps.max(1) as f64,
            loss_unsup: unsup_acc / steps.max(1) as f64,
        });
    }
    Ok(trace)
}

/// Deterministic batch sampler used by tests that need a mixed batch.
pub fn sample_mixed_batch<'a>(
    mixed: &'a [MixedItem],
    d_l: &'a [PairRecord],
    d_u: &'a [PairRecord],
    size: usize,
    seed: u64,
) -> Vec<(&'a PairRecord, &'a BinaryMap)> {
    let mut order: Vec<usize> = (0..mixed.len()).collect();
    order.shuffle(&mut stream(seed, Stream::Batch, 3));
    order
        .into_iter()
        .take(size)
        .map(|mi| {
            let item = &mixed[mi];
            let record = if item.labeled { &d_l[item.index] } else { &d_u[item.index] };
            (record, &item.target)
        })
        .collect()
}
