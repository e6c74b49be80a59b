//! Test-time inference.

use crate::error::Result;
use crate::maps::ConfidenceMap;
use crate::pipeline::{net_confidence_maps, AvslNet};
use crate::tensor::Tensor;
use crate::world::PairRecord;

/// Which networks to read at evaluation time.
#[derive(Debug, Clone, Copy)]
pub enum EvalNets<'a> {
    /// Merge the two maps elementwise: P = (P_a + P_b) / 2.
    Fused(&'a AvslNet, &'a AvslNet),
    Single(&'a AvslNet),
}

/// Fused dual-teacher map for one sample batch (no augmentation).
pub fn infer_fused(
    net_a: &AvslNet,
    net_b: &AvslNet,
    visuals: &[&Tensor],
    audios: &[&[f64]],
) -> Result<Vec<ConfidenceMap>> {
    let maps_a = net_confidence_maps(net_a, visuals, audios)?;
    let maps_b = net_confidence_maps(net_b, visuals, audios)?;
    maps_a
        .iter()
        .zip(&maps_b)
        .map(|(a, b)| a.mean_with(b))
        .collect()
}

/// Confidence maps for a record list under the chosen inference convention,
/// chunked to bound memory. Inputs are never augmented here.
pub fn eval_maps(nets: EvalNets, records: &[PairRecord]) -> Result<Vec<ConfidenceMap>> {
    const CHUNK: usize = 128;
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(CHUNK) {
        let visuals: Vec<&Tensor> = chunk.iter().map(|r| &r.pair.visual).collect();
        let audios: Vec<&[f64]> = chunk.iter().map(|r| r.pair.audio.as_slice()).collect();
        let maps = match nets {
            EvalNets::Fused(a, b) => infer_fused(a, b, &visuals, &audios)?,
            EvalNets::Single(n) => net_confidence_maps(n, &visuals, &audios)?,
        };
        out.extend(maps);
    }
    Ok(out)
}
