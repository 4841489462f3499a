//! Flat, ordered description of every layer in the student network.
//!
//! Canonical names:
//!
//! | prefix                         | layers |
//! |--------------------------------|--------|
//! | `stage0.0`                     | `conv`, `norm` (stem, 3x3 stride 2) |
//! | `stage{i}.{b}` (MV2)           | `expand`, `expand_norm`, `dw`, `dw_norm`, `project`, `project_norm` |
//! | `stage{i}.{b}` (MobileViTv2)   | `local_dw`, `local_dw_norm`, `local_pw`, `attn{l}_norm`, `attn{l}_qkv`, `attn{l}_out`, `ffn{l}_norm`, `ffn{l}_fc1`, `ffn{l}_fc2`, `global_norm`, `proj`, `proj_norm` |
//! | `head.0`                       | `point`, `edge`, `heatmap`, `heatmap_norm`, `refine0`, `refine1`, `refine2` |
//!
//! Every parameterized layer owns `{layer}.weight` and, for biased
//! convolutions and all norms, `{layer}.bias`.

use super::config::ModelConfig;
use crate::weights::ParamSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
    },
    /// Per-channel affine norm (weight + bias).
    Norm {
        channels: usize,
    },
    /// Score-weighted sum of keys over tokens: `dim` MACs per token.
    AttentionContext {
        dim: usize,
    },
    /// Parameter-free elementwise work: `ops` floating-point operations per element.
    Elementwise {
        channels: usize,
        ops: usize,
    },
    Upsample {
        channels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Spatial size of the layer output (tokens laid out as `P x N` for attention).
    pub out_hw: (usize, usize),
}

impl LayerSpec {
    pub fn params(&self) -> Vec<ParamSpec> {
        let p = |suffix: &str, shape: Vec<usize>| ParamSpec { name: format!("{}.{suffix}", self.name), shape };
        match self.kind {
            LayerKind::Conv { cin, cout, kernel, groups, bias, .. } => {
                let mut v = vec![p("weight", vec![cout, cin / groups, kernel, kernel])];
                if bias {
                    v.push(p("bias", vec![cout]));
                }
                v
            }
            LayerKind::Norm { channels } => vec![p("weight", vec![channels]), p("bias", vec![channels])],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> u64 {
        self.params().iter().map(|p| p.shape.iter().product::<usize>() as u64).sum()
    }

    pub fn macs(&self) -> u64 {
        let hw = (self.out_hw.0 * self.out_hw.1) as u64;
        match self.kind {
            LayerKind::Conv { cin, cout, kernel, groups, .. } => (cout * (cin / groups) * kernel * kernel) as u64 * hw,
            LayerKind::AttentionContext { dim } => dim as u64 * hw,
            _ => 0,
        }
    }

    /// Non-MAC floating-point work (activations, elementwise products, norms, resampling).
    pub fn elementwise_flops(&self) -> u64 {
        let hw = (self.out_hw.0 * self.out_hw.1) as u64;
        match self.kind {
            LayerKind::Elementwise { channels, ops } => (channels * ops) as u64 * hw,
            LayerKind::Norm { channels } => 2 * channels as u64 * hw,
            LayerKind::Upsample { channels } => 4 * channels as u64 * hw,
            _ => 0,
        }
    }
}

struct Builder<'a> {
    cfg: &'a ModelConfig,
    layers: Vec<LayerSpec>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, kind: LayerKind, out_hw: (usize, usize)) {
        self.layers.push(LayerSpec { name, kind, out_hw });
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: String,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
        out_hw: (usize, usize),
    ) {
        self.push(name, LayerKind::Conv { cin, cout, kernel, stride, groups, bias }, out_hw);
    }

    fn norm(&mut self, name: String, channels: usize, out_hw: (usize, usize)) {
        self.push(name, LayerKind::Norm { channels }, out_hw);
    }

    fn act(&mut self, name: String, channels: usize, out_hw: (usize, usize)) {
        self.push(name, LayerKind::Elementwise { channels, ops: 1 }, out_hw);
    }

    fn mv2(&mut self, prefix: &str, cin: usize, cout: usize, stride: usize, in_hw: (usize, usize)) -> (usize, usize) {
        let hidden = cin * self.cfg.mv2_expansion;
        let out_hw = (in_hw.0 / stride, in_hw.1 / stride);
        self.conv(format!("{prefix}.expand"), cin, hidden, 1, 1, 1, false, in_hw);
        self.norm(format!("{prefix}.expand_norm"), hidden, in_hw);
        self.act(format!("{prefix}.expand_act"), hidden, in_hw);
        self.conv(format!("{prefix}.dw"), hidden, hidden, 3, stride, hidden, false, out_hw);
        self.norm(format!("{prefix}.dw_norm"), hidden, out_hw);
        self.act(format!("{prefix}.dw_act"), hidden, out_hw);
        self.conv(format!("{prefix}.project"), hidden, cout, 1, 1, 1, false, out_hw);
        self.norm(format!("{prefix}.project_norm"), cout, out_hw);
        if stride == 1 && cin == cout {
            self.act(format!("{prefix}.residual"), cout, out_hw);
        }
        out_hw
    }

    fn mobilevit(&mut self, prefix: &str, channels: usize, dim: usize, depth: usize, hw: (usize, usize)) {
        let (ph, pw) = self.cfg.patch_size;
        // tokens laid out as [d, P, N]
        let tokens = (ph * pw, (hw.0 / ph) * (hw.1 / pw));
        let ffn = dim * self.cfg.ffn_multiplier;
        self.conv(format!("{prefix}.local_dw"), channels, channels, 3, 1, channels, false, hw);
        self.norm(format!("{prefix}.local_dw_norm"), channels, hw);
        self.act(format!("{prefix}.local_dw_act"), channels, hw);
        self.conv(format!("{prefix}.local_pw"), channels, dim, 1, 1, 1, false, hw);
        for l in 0..depth {
            self.norm(format!("{prefix}.attn{l}_norm"), dim, tokens);
            self.conv(format!("{prefix}.attn{l}_qkv"), dim, 1 + 2 * dim, 1, 1, 1, true, tokens);
            // softmax over scores (~3 ops), relu(value) * context, residual add
            self.push(format!("{prefix}.attn{l}_scores"), LayerKind::Elementwise { channels: 1, ops: 3 }, tokens);
            self.push(format!("{prefix}.attn{l}_context"), LayerKind::AttentionContext { dim }, tokens);
            self.push(format!("{prefix}.attn{l}_gate"), LayerKind::Elementwise { channels: dim, ops: 2 }, tokens);
            self.conv(format!("{prefix}.attn{l}_out"), dim, dim, 1, 1, 1, true, tokens);
            self.act(format!("{prefix}.attn{l}_residual"), dim, tokens);
            self.norm(format!("{prefix}.ffn{l}_norm"), dim, tokens);
            self.conv(format!("{prefix}.ffn{l}_fc1"), dim, ffn, 1, 1, 1, true, tokens);
            self.act(format!("{prefix}.ffn{l}_act"), ffn, tokens);
            self.conv(format!("{prefix}.ffn{l}_fc2"), ffn, dim, 1, 1, 1, true, tokens);
            self.act(format!("{prefix}.ffn{l}_residual"), dim, tokens);
        }
        self.norm(format!("{prefix}.global_norm"), dim, tokens);
        self.conv(format!("{prefix}.proj"), dim, channels, 1, 1, 1, false, hw);
        self.norm(format!("{prefix}.proj_norm"), channels, hw);
    }
}

/// Every layer of the network in execution order.
pub fn layer_plan(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let mut b = Builder { cfg, layers: Vec::new() };
    let sizes = cfg.stage_sizes();
    let stem = cfg.stem_channels();
    b.conv("stage0.0.conv".into(), 3, stem, 3, 2, 1, false, sizes[0]);
    b.norm("stage0.0.norm".into(), stem, sizes[0]);
    b.act("stage0.0.act".into(), stem, sizes[0]);

    let mut cin = stem;
    let mut hw = sizes[0];
    for (i, stage) in cfg.stages.iter().enumerate() {
        let cout = cfg.scaled(stage.base_channels);
        for blk in 0..stage.mv2_blocks {
            let stride = if blk == 0 { stage.stride } else { 1 };
            hw = b.mv2(&format!("stage{}.{blk}", i + 1), cin, cout, stride, hw);
            cin = cout;
        }
        if let Some(attn) = stage.attention {
            let prefix = format!("stage{}.{}", i + 1, stage.mv2_blocks);
            b.mobilevit(&prefix, cout, cfg.scaled(attn.base_dim), attn.depth, hw);
        }
    }

    let feat = cin;
    let hm = cfg.heatmap_size;
    let (n, e) = (cfg.num_landmarks(), cfg.num_edges());
    let k = cfg.head_kernel;
    b.push("neck.0.upsample".into(), LayerKind::Upsample { channels: feat }, hm);
    b.conv("head.0.point".into(), feat, n, k, 1, 1, true, hm);
    b.act("head.0.point_act".into(), n, hm);
    b.conv("head.0.edge".into(), feat, e, k, 1, 1, true, hm);
    b.act("head.0.edge_act".into(), e, hm);
    b.push("head.0.e2p".into(), LayerKind::Elementwise { channels: n, ops: 1 }, hm);
    b.act("head.0.mask".into(), n, hm);
    b.conv("head.0.heatmap".into(), feat, n, k, 1, 1, true, hm);
    b.norm("head.0.heatmap_norm".into(), n, hm);
    b.act("head.0.heatmap_act".into(), n, hm);
    b.act("head.0.attend".into(), n, hm);
    for r in 0..3 {
        b.conv(format!("head.0.refine{r}"), n, n, k, 1, 1, true, hm);
        if r < 2 {
            b.act(format!("head.0.refine{r}_act"), n, hm);
        }
    }
    b.act("head.0.residual".into(), n, hm);
    b.layers
}

/// Expected tensors of a complete weight store, in canonical order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    layer_plan(cfg).iter().flat_map(|l| l.params()).collect()
}
