//! Soft-argmax decoding: each landmark is the expectation of the heatmap
//! grid-cell centres under its normalized heatmap.

use super::config::DecodeMode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `N` landmark positions in input-pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<[f32; 2]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f32; 2]>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NonFinite(format!("landmark {i}")));
        }
        Ok(LandmarkSet { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_deviation(&self, other: &LandmarkSet) -> f32 {
        self.points.iter().zip(&other.points).map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs())).fold(0.0, f32::max)
    }
}

/// Cell-centre coordinates of a heatmap grid in input pixels:
/// `x_k = (k_x + 0.5) * stride_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeGrid {
    pub stride: (f32, f32),
}

impl DecodeGrid {
    pub fn new(stride_x: f32, stride_y: f32) -> Self {
        DecodeGrid { stride: (stride_x, stride_y) }
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [(col as f64 + 0.5) * self.stride.0 as f64, (row as f64 + 0.5) * self.stride.1 as f64]
    }

    pub fn centroid(&self, h: usize, w: usize) -> [f32; 2] {
        [(w as f64 * self.stride.0 as f64 / 2.0) as f32, (h as f64 * self.stride.1 as f64 / 2.0) as f32]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub landmarks: LandmarkSet,
    /// Channels whose sum-mode mass was at or below `eps`; these decode to the
    /// grid centroid.
    pub fallback_channels: Vec<usize>,
}

/// Decodes `[N, H, W]` heatmaps. Accumulation is in f64.
pub fn soft_argmax(heatmap: &Tensor, grid: DecodeGrid, mode: DecodeMode) -> Result<Decoded> {
    let [n, h, w] = heatmap.dims3("soft_argmax")?;
    if !heatmap.all_finite() {
        return Err(Error::NonFinite("heatmap passed to soft_argmax".into()));
    }
    let v = heatmap.values();
    let hw = h * w;
    let mut points = Vec::with_capacity(n);
    let mut fallback_channels = Vec::new();
    let mut weights = vec![0f64; hw];
    for c in 0..n {
        let plane = &v[c * hw..(c + 1) * hw];
        let total = match mode {
            DecodeMode::Sum { .. } => {
                for (wk, &p) in weights.iter_mut().zip(plane) {
                    *wk = (p as f64).max(0.0);
                }
                weights.iter().sum::<f64>()
            }
            DecodeMode::Softmax { temperature } => {
                if !(temperature > 0.0) {
                    return Err(Error::invalid("soft_argmax", format!("temperature {temperature} must be positive")));
                }
                let t = temperature as f64;
                let max = plane.iter().fold(f32::NEG_INFINITY, |m, &p| m.max(p)) as f64;
                for (wk, &p) in weights.iter_mut().zip(plane) {
                    *wk = ((p as f64 - max) / t).exp();
                }
                weights.iter().sum::<f64>()
            }
        };
        if let DecodeMode::Sum { eps } = mode {
            if total <= eps as f64 {
                fallback_channels.push(c);
                points.push(grid.centroid(h, w));
                continue;
            }
        }
        let (mut sx, mut sy) = (0f64, 0f64);
        for row in 0..h {
            for col in 0..w {
                let wk = weights[row * w + col];
                let [ox, oy] = grid.cell_center(row, col);
                sx += wk * ox;
                sy += wk * oy;
            }
        }
        points.push([(sx / total) as f32, (sy / total) as f32]);
    }
    Ok(Decoded { landmarks: LandmarkSet::new(points)?, fallback_channels })
}
