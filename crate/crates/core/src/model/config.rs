use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::UpsampleMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Relu,
}

/// Normalization used after backbone convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneNorm {
    /// Batch norm with running statistics folded into a per-channel affine.
    FoldedBatch,
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecodeMode {
    /// Clamp to nonnegative and divide by the channel total; totals at or
    /// below `eps` fall back to the grid centroid.
    Sum { eps: f32 },
    /// Spatial softmax of `heatmap / temperature`.
    Softmax { temperature: f32 },
}

impl Default for DecodeMode {
    fn default() -> Self {
        DecodeMode::Sum { eps: 1e-6 }
    }
}

/// Separable-attention section of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionStage {
    /// Token dimension before width scaling.
    pub base_dim: usize,
    pub depth: usize,
}

/// One backbone stage: `mv2_blocks` inverted-residual blocks (the first one
/// carries the stage stride) optionally followed by one MobileViTv2 block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub base_channels: usize,
    pub mv2_blocks: usize,
    pub stride: usize,
    pub attention: Option<AttentionStage>,
}

/// Landmark/boundary bookkeeping: which edges each landmark sits on and how
/// indices swap under a horizontal flip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkScheme {
    pub landmark_names: Vec<String>,
    pub edge_names: Vec<String>,
    /// Row-major `N x E` 0/1 incidence matrix.
    pub incidence: Vec<Vec<u8>>,
    pub flip_permutation: Option<Vec<usize>>,
}

impl LandmarkScheme {
    pub fn num_landmarks(&self) -> usize {
        self.incidence.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.num_edges();
        for (i, row) in self.incidence.iter().enumerate() {
            if row.len() != e {
                return Err(Error::invalid("landmark_scheme", format!("incidence row {i} has {} columns, expected {e}", row.len())));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(Error::invalid("landmark_scheme", format!("incidence row {i} is not binary")));
            }
            if row.iter().all(|&v| v == 0) {
                return Err(Error::invalid("landmark_scheme", format!("landmark {i} has no incident edge")));
            }
        }
        if !self.landmark_names.is_empty() && self.landmark_names.len() != self.num_landmarks() {
            return Err(Error::invalid("landmark_scheme", "landmark_names length differs from incidence rows"));
        }
        if let Some(p) = &self.flip_permutation {
            check_involution(p, self.num_landmarks())?;
        }
        Ok(())
    }

    /// Semantic 51-point layout: the common 68-point annotation without the
    /// 17 jaw-contour points, grouped into eight boundaries.
    pub fn default_51() -> Self {
        let groups: [(&str, usize); 8] = [
            ("right_brow", 5),
            ("left_brow", 5),
            ("nose_bridge", 4),
            ("nose_base", 5),
            ("right_eye", 6),
            ("left_eye", 6),
            ("outer_lip", 12),
            ("inner_lip", 8),
        ];
        let mut incidence = Vec::new();
        let mut landmark_names = Vec::new();
        for (e, (name, count)) in groups.iter().enumerate() {
            for k in 0..*count {
                let mut row = vec![0u8; groups.len()];
                row[e] = 1;
                incidence.push(row);
                landmark_names.push(format!("{name}_{k}"));
            }
        }
        // Mirror pairs in 68-point numbering, shifted by the 17 dropped contour points.
        let pairs68: [(usize, usize); 21] = [
            (17, 26),
            (18, 25),
            (19, 24),
            (20, 23),
            (21, 22),
            (31, 35),
            (32, 34),
            (36, 45),
            (37, 44),
            (38, 43),
            (39, 42),
            (40, 47),
            (41, 46),
            (48, 54),
            (49, 53),
            (50, 52),
            (55, 59),
            (56, 58),
            (60, 64),
            (61, 63),
            (65, 67),
        ];
        let mut flip: Vec<usize> = (0..51).collect();
        for (a, b) in pairs68 {
            flip[a - 17] = b - 17;
            flip[b - 17] = a - 17;
        }
        LandmarkScheme {
            landmark_names,
            edge_names: groups.iter().map(|(n, _)| n.to_string()).collect(),
            incidence,
            flip_permutation: Some(flip),
        }
    }

    /// Contiguous groups of landmarks, one edge per group, no flip mapping.
    pub fn contiguous(num_landmarks: usize, num_edges: usize) -> Self {
        let incidence = (0..num_landmarks)
            .map(|i| {
                let mut row = vec![0u8; num_edges];
                row[i * num_edges / num_landmarks] = 1;
                row
            })
            .collect();
        LandmarkScheme {
            landmark_names: Vec::new(),
            edge_names: (0..num_edges).map(|e| format!("edge_{e}")).collect(),
            incidence,
            flip_permutation: None,
        }
    }
}

pub(crate) fn check_involution(p: &[usize], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::invalid("flip_permutation", format!("length {} != {n}", p.len())));
    }
    for (i, &j) in p.iter().enumerate() {
        if j >= n || p[j] != i {
            return Err(Error::invalid("flip_permutation", format!("not an involution at index {i}")));
        }
    }
    Ok(())
}

/// Architecture hyperparameters of the student network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub alpha: f32,
    pub input_size: (usize, usize),
    pub heatmap_size: (usize, usize),
    pub patch_size: (usize, usize),
    pub stem_base_channels: usize,
    pub stages: Vec<StageConfig>,
    pub mv2_expansion: usize,
    pub ffn_multiplier: usize,
    pub activation: Activation,
    pub backbone_norm: BackboneNorm,
    pub norm_eps: f32,
    pub upsample_mode: UpsampleMode,
    /// Kernel size of every generator convolution (odd, same padding).
    pub head_kernel: usize,
    pub decode: DecodeMode,
    pub scheme: LandmarkScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::student()
    }
}

impl ModelConfig {
    /// The MobileViT-v2 0.5-width student with the 51-point scheme.
    pub fn student() -> Self {
        ModelConfig::student_with_alpha(0.5)
    }

    pub fn student_with_alpha(alpha: f32) -> Self {
        let attn = |base_dim, depth| Some(AttentionStage { base_dim, depth });
        ModelConfig {
            alpha,
            input_size: (256, 256),
            heatmap_size: (64, 64),
            patch_size: (2, 2),
            stem_base_channels: 32,
            stages: vec![
                StageConfig { base_channels: 64, mv2_blocks: 1, stride: 1, attention: None },
                StageConfig { base_channels: 128, mv2_blocks: 2, stride: 2, attention: None },
                StageConfig { base_channels: 256, mv2_blocks: 1, stride: 2, attention: attn(128, 2) },
                StageConfig { base_channels: 384, mv2_blocks: 1, stride: 2, attention: attn(192, 4) },
                StageConfig { base_channels: 512, mv2_blocks: 1, stride: 2, attention: attn(256, 3) },
            ],
            mv2_expansion: 2,
            ffn_multiplier: 2,
            activation: Activation::Silu,
            backbone_norm: BackboneNorm::FoldedBatch,
            norm_eps: 1e-5,
            upsample_mode: UpsampleMode::Bilinear,
            head_kernel: 1,
            decode: DecodeMode::default(),
            scheme: LandmarkScheme::default_51(),
        }
    }

    /// A small network for desk-scale training and fast tests: 64x64 input,
    /// 16x16 heatmaps, `num_landmarks` points on `num_edges` boundaries.
    pub fn miniature(num_landmarks: usize, num_edges: usize) -> Self {
        ModelConfig {
            alpha: 0.125,
            input_size: (64, 64),
            heatmap_size: (16, 16),
            scheme: LandmarkScheme::contiguous(num_landmarks, num_edges),
            ..ModelConfig::student()
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn num_landmarks(&self) -> usize {
        self.scheme.num_landmarks()
    }

    pub fn num_edges(&self) -> usize {
        self.scheme.num_edges()
    }

    /// Width-scaled channel count: nearest even integer, at least 2.
    pub fn scaled(&self, base: usize) -> usize {
        let c = (base as f64 * self.alpha as f64 / 2.0).round() as usize * 2;
        c.max(2)
    }

    pub fn stem_channels(&self) -> usize {
        self.scaled(self.stem_base_channels)
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        self.stages.iter().map(|s| self.scaled(s.base_channels)).collect()
    }

    /// Input-pixel distance between adjacent heatmap cells.
    pub fn heatmap_stride(&self) -> (f32, f32) {
        (self.input_size.1 as f32 / self.heatmap_size.1 as f32, self.input_size.0 as f32 / self.heatmap_size.0 as f32)
    }

    /// Spatial size after the stem and every stage, in order.
    pub fn stage_sizes(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (self.input_size.0 / 2, self.input_size.1 / 2);
        let mut out = vec![(h, w)];
        for s in &self.stages {
            h /= s.stride;
            w /= s.stride;
            out.push((h, w));
        }
        out
    }

    pub fn final_channels(&self) -> usize {
        self.stage_channels().last().copied().unwrap_or_else(|| self.stem_channels())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("model_config", d));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.stages.iter().any(|s| s.mv2_blocks == 0 || !(1..=2).contains(&s.stride)) {
            return bad("every stage needs >= 1 MV2 block and stride 1 or 2".into());
        }
        let total_stride: usize = 2 * self.stages.iter().map(|s| s.stride).product::<usize>();
        let (ih, iw) = self.input_size;
        if ih % total_stride != 0 || iw % total_stride != 0 {
            return bad(format!("input {ih}x{iw} not divisible by total stride {total_stride}"));
        }
        let (ph, pw) = self.patch_size;
        for (s, (h, w)) in self.stages.iter().zip(self.stage_sizes().into_iter().skip(1)) {
            if s.attention.is_some() && (h % ph != 0 || w % pw != 0) {
                return bad(format!("stage output {h}x{w} not divisible by patch {ph}x{pw}"));
            }
        }
        let (fh, fw) = *self.stage_sizes().last().expect("stem size");
        let (hh, hw) = self.heatmap_size;
        if hh < fh || hw < fw {
            return bad(format!("heatmap {hh}x{hw} smaller than final feature {fh}x{fw}"));
        }
        if self.head_kernel % 2 == 0 {
            return bad(format!("head kernel {} must be odd", self.head_kernel));
        }
        self.scheme.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_ladder_at_half_width() {
        let cfg = ModelConfig::student();
        assert_eq!(cfg.stem_channels(), 16);
        assert_eq!(cfg.stage_channels(), vec![32, 64, 128, 192, 256]);
        let dims: Vec<usize> = cfg.stages.iter().filter_map(|s| s.attention).map(|a| cfg.scaled(a.base_dim)).collect();
        assert_eq!(dims, vec![64, 96, 128]);
        assert_eq!(cfg.stage_sizes(), vec![(128, 128), (128, 128), (64, 64), (32, 32), (16, 16), (8, 8)]);
        cfg.validate().unwrap();
    }

    #[test]
    fn rounding_rule() {
        let mut cfg = ModelConfig::student();
        cfg.alpha = 0.3;
        assert_eq!(cfg.scaled(32), 10); // 9.6 -> 4.8 -> 5 -> 10
        cfg.alpha = 0.01;
        assert_eq!(cfg.scaled(32), 2);
    }

    #[test]
    fn default_scheme_is_valid() {
        let s = LandmarkScheme::default_51();
        assert_eq!(s.num_landmarks(), 51);
        assert_eq!(s.num_edges(), 8);
        s.validate().unwrap();
        let p = s.flip_permutation.as_ref().unwrap();
        assert!(p.iter().enumerate().all(|(i, &j)| p[j] == i));
        // nose tip maps to itself, outer eye corners swap
        assert_eq!(p[30 - 17], 30 - 17);
        assert_eq!(p[36 - 17], 45 - 17);
    }

    #[test]
    fn empty_incidence_row_rejected() {
        let mut s = LandmarkScheme::contiguous(4, 2);
        s.incidence[2] = vec![0, 0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = ModelConfig::miniature(3, 2);
        let back: ModelConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }
}
