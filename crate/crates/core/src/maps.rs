//! Confidence and binary localization maps.

use crate::error::{DmtError, Result};

/// H x W grid of audio-visual similarity scores. Raw maps hold cosine
/// values in [-1, 1]; evaluation code normalizes copies into [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(DmtError::InvalidShape {
                op: "confidence_map",
                shape: vec![h, w],
                msg: format!("expected {} values, got {}", h * w, data.len()),
            });
        }
        Ok(ConfidenceMap { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        ConfidenceMap {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Min-max normalize into [0, 1]. A constant map normalizes to all 0.5.
    pub fn min_max_normalized(&self) -> ConfidenceMap {
        let mn = self.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = mx - mn;
        let data = if range <= 0.0 {
            vec![0.5; self.data.len()]
        } else {
            self.data.iter().map(|&v| (v - mn) / range).collect()
        };
        ConfidenceMap {
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Elementwise mean of two same-shape maps.
    pub fn mean_with(&self, other: &ConfidenceMap) -> Result<ConfidenceMap> {
        if self.h != other.h || self.w != other.w {
            return Err(DmtError::ShapeMismatch {
                op: "fuse_maps",
                lhs: vec![self.h, self.w],
                rhs: vec![other.h, other.w],
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| 0.5 * (a + b))
            .collect();
        Ok(ConfidenceMap {
            h: self.h,
            w: self.w,
            data,
        })
    }
}

/// H x W grid over {0, 1}: ground-truth boxes, thresholded predictions,
/// and pseudo-labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl BinaryMap {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(DmtError::InvalidShape {
                op: "binary_map",
                shape: vec![h, w],
                msg: format!("expected {} values, got {}", h * w, data.len()),
            });
        }
        if data.iter().any(|&v| v > 1) {
            return Err(DmtError::domain("binary_map", "values must be 0 or 1"));
        }
        Ok(BinaryMap { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        BinaryMap {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = f(y, x) as u8;
            }
        }
        BinaryMap { h, w, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.count_ones() == 0
    }

    /// Pixelwise AND.
    pub fn and(&self, other: &BinaryMap) -> Result<BinaryMap> {
        if self.h != other.h || self.w != other.w {
            return Err(DmtError::ShapeMismatch {
                op: "binary_and",
                lhs: vec![self.h, self.w],
                rhs: vec![other.h, other.w],
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a & b).collect();
        Ok(BinaryMap {
            h: self.h,
            w: self.w,
            data,
        })
    }

    /// Map values as f64 0.0/1.0, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}
