//! MobileViT-v2 feature extractor: stem, inverted-residual (MV2) blocks and
//! MobileViTv2 blocks with separable self-attention.

use super::config::{Activation, BackboneNorm, ModelConfig};
use crate::error::{Error, Result};
use crate::patch::{fold_foldfree, unfold_foldfree, PatchSpec};
use crate::tensor::{self, Conv2dParams, Tensor};
use crate::weights::WeightStore;

#[derive(Debug, Clone, Copy)]
pub struct ConvLayer<'a> {
    pub weight: &'a Tensor,
    pub bias: Option<&'a Tensor>,
}

impl<'a> ConvLayer<'a> {
    pub fn from_store(store: &'a WeightStore, name: &str) -> Result<Self> {
        let weight = store.get(&format!("{name}.weight"))?;
        let bias_name = format!("{name}.bias");
        let bias = store.contains(&bias_name).then(|| store.get(&bias_name)).transpose()?;
        Ok(ConvLayer { weight, bias })
    }

    /// Same-padded convolution (`padding = kernel / 2`).
    pub fn apply(&self, x: &Tensor, stride: usize, groups: usize) -> Result<Tensor> {
        let k = self.weight.shape().get(2).copied().unwrap_or(1);
        tensor::conv2d(x, self.weight, self.bias, Conv2dParams::new(stride, k / 2, groups))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NormLayer<'a> {
    pub weight: &'a Tensor,
    pub bias: &'a Tensor,
}

impl<'a> NormLayer<'a> {
    pub fn from_store(store: &'a WeightStore, name: &str) -> Result<Self> {
        Ok(NormLayer { weight: store.get(&format!("{name}.weight"))?, bias: store.get(&format!("{name}.bias"))? })
    }
}

/// Numeric choices shared by every backbone block.
#[derive(Debug, Clone, Copy)]
pub struct BlockContext {
    pub activation: Activation,
    pub norm: BackboneNorm,
    pub eps: f32,
    pub patch: (usize, usize),
}

impl BlockContext {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        BlockContext { activation: cfg.activation, norm: cfg.backbone_norm, eps: cfg.norm_eps, patch: cfg.patch_size }
    }

    pub fn act(&self, x: &Tensor) -> Tensor {
        match self.activation {
            Activation::Silu => tensor::silu(x),
            Activation::Relu => tensor::relu(x),
        }
    }

    pub fn norm(&self, x: &Tensor, n: &NormLayer) -> Result<Tensor> {
        match self.norm {
            BackboneNorm::FoldedBatch => tensor::affine_channels(x, n.weight, n.bias),
            BackboneNorm::Instance => tensor::instance_norm(x, n.weight, n.bias, self.eps),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Mv2Params<'a> {
    pub expand: ConvLayer<'a>,
    pub expand_norm: NormLayer<'a>,
    pub dw: ConvLayer<'a>,
    pub dw_norm: NormLayer<'a>,
    pub project: ConvLayer<'a>,
    pub project_norm: NormLayer<'a>,
}

impl<'a> Mv2Params<'a> {
    pub fn from_store(store: &'a WeightStore, prefix: &str) -> Result<Self> {
        let c = |l: &str| ConvLayer::from_store(store, &format!("{prefix}.{l}"));
        let n = |l: &str| NormLayer::from_store(store, &format!("{prefix}.{l}"));
        Ok(Mv2Params {
            expand: c("expand")?,
            expand_norm: n("expand_norm")?,
            dw: c("dw")?,
            dw_norm: n("dw_norm")?,
            project: c("project")?,
            project_norm: n("project_norm")?,
        })
    }
}

/// Inverted residual: pointwise expand, depthwise 3x3 (carrying the stride),
/// pointwise project; identity shortcut when the shape is preserved.
pub fn mv2_block(x: &Tensor, p: &Mv2Params, stride: usize, ctx: &BlockContext) -> Result<Tensor> {
    if !(1..=2).contains(&stride) {
        return Err(Error::invalid("mv2_block", format!("stride {stride} not in {{1, 2}}")));
    }
    let [c_in, _, _] = x.dims3("mv2_block")?;
    let hidden = p.dw.weight.shape()[0];
    let h = ctx.act(&ctx.norm(&p.expand.apply(x, 1, 1)?, &p.expand_norm)?);
    let h = ctx.act(&ctx.norm(&p.dw.apply(&h, stride, hidden)?, &p.dw_norm)?);
    let y = ctx.norm(&p.project.apply(&h, 1, 1)?, &p.project_norm)?;
    if stride == 1 && y.shape()[0] == c_in {
        tensor::add(x, &y)
    } else {
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams<'a> {
    /// `d -> 1 + 2d` projection producing (score, keys, values).
    pub qkv: ConvLayer<'a>,
    pub out: ConvLayer<'a>,
}

/// Separable self-attention over `[B, d, P, N]` tokens.
///
/// Per batch item and per in-patch position `p`: a single score channel is
/// softmaxed over the `N` patches, the context vector is the score-weighted
/// sum of keys, and the output is `out_proj(relu(values) * context)`. Cost
/// is linear in the number of tokens.
pub fn separable_attention(tokens: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let [b, d, pa, n] = tokens.dims4("separable_attention")?;
    let qkv_out = p.qkv.weight.shape()[0];
    if qkv_out != 1 + 2 * d || p.qkv.weight.shape()[1] != d {
        return Err(Error::shape("separable_attention", format!("qkv weight {:?} incompatible with token dim {d}", p.qkv.weight.shape())));
    }
    let per_batch = d * pa * n;
    let v = tokens.values();
    let mut out = Vec::with_capacity(b * per_batch);
    for bi in 0..b {
        let t = Tensor::new(&[d, pa, n], v[bi * per_batch..(bi + 1) * per_batch].to_vec())?;
        let qkv = p.qkv.apply(&t, 1, 1)?;
        let parts = qkv.values();
        let scores = tensor::softmax(&Tensor::new(&[1, pa, n], parts[..pa * n].to_vec())?, 2)?;
        let keys = Tensor::new(&[d, pa, n], parts[pa * n..(1 + d) * pa * n].to_vec())?;
        let values = Tensor::new(&[d, pa, n], parts[(1 + d) * pa * n..].to_vec())?;
        let context = tensor::sum(&tensor::mul(&keys, &scores)?, 2)?; // [d, P, 1]
        let gated = tensor::mul(&tensor::relu(&values), &context)?;
        out.extend(p.out.apply(&gated, 1, 1)?.into_values());
    }
    Tensor::new(tokens.shape(), out)
}

#[derive(Debug, Clone, Copy)]
pub struct TransformerLayerParams<'a> {
    pub attn_norm: NormLayer<'a>,
    pub attn: AttentionParams<'a>,
    pub ffn_norm: NormLayer<'a>,
    pub fc1: ConvLayer<'a>,
    pub fc2: ConvLayer<'a>,
}

#[derive(Debug, Clone)]
pub struct MobileVitParams<'a> {
    pub local_dw: ConvLayer<'a>,
    pub local_dw_norm: NormLayer<'a>,
    pub local_pw: ConvLayer<'a>,
    pub layers: Vec<TransformerLayerParams<'a>>,
    pub global_norm: NormLayer<'a>,
    pub proj: ConvLayer<'a>,
    pub proj_norm: NormLayer<'a>,
}

impl<'a> MobileVitParams<'a> {
    pub fn from_store(store: &'a WeightStore, prefix: &str, depth: usize) -> Result<Self> {
        let c = |l: &str| ConvLayer::from_store(store, &format!("{prefix}.{l}"));
        let n = |l: &str| NormLayer::from_store(store, &format!("{prefix}.{l}"));
        let layers = (0..depth)
            .map(|l| {
                Ok(TransformerLayerParams {
                    attn_norm: n(&format!("attn{l}_norm"))?,
                    attn: AttentionParams { qkv: c(&format!("attn{l}_qkv"))?, out: c(&format!("attn{l}_out"))? },
                    ffn_norm: n(&format!("ffn{l}_norm"))?,
                    fc1: c(&format!("ffn{l}_fc1"))?,
                    fc2: c(&format!("ffn{l}_fc2"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MobileVitParams {
            local_dw: c("local_dw")?,
            local_dw_norm: n("local_dw_norm")?,
            local_pw: c("local_pw")?,
            layers,
            global_norm: n("global_norm")?,
            proj: c("proj")?,
            proj_norm: n("proj_norm")?,
        })
    }
}

fn layer_norm(x: &Tensor, n: &NormLayer, eps: f32) -> Result<Tensor> {
    tensor::layer_norm_channels(x, n.weight, n.bias, eps)
}

/// Runs the pre-norm transformer stack on `[d, P, N]` tokens.
pub fn transformer_stack(tokens: &Tensor, layers: &[TransformerLayerParams], ctx: &BlockContext) -> Result<Tensor> {
    let [d, pa, n] = tokens.dims3("transformer_stack")?;
    let mut t = tokens.clone();
    for l in layers {
        let normed = tensor::reshape(&layer_norm(&t, &l.attn_norm, ctx.eps)?, &[1, d, pa, n])?;
        let a = tensor::reshape(&separable_attention(&normed, &l.attn)?, &[d, pa, n])?;
        t = tensor::add(&t, &a)?;
        let normed = layer_norm(&t, &l.ffn_norm, ctx.eps)?;
        let hidden = ctx.act(&l.fc1.apply(&normed, 1, 1)?);
        t = tensor::add(&t, &l.fc2.apply(&hidden, 1, 1)?)?;
    }
    Ok(t)
}

/// Local depthwise + pointwise convolution, patch unfold, transformer stack,
/// fold, and a pointwise projection back to the stage width.
pub fn mobilevit_v2_block(x: &Tensor, p: &MobileVitParams, ctx: &BlockContext) -> Result<Tensor> {
    let [c, h, w] = x.dims3("mobilevit_v2_block")?;
    let local = ctx.act(&ctx.norm(&p.local_dw.apply(x, 1, c)?, &p.local_dw_norm)?);
    let local = p.local_pw.apply(&local, 1, 1)?;
    let d = local.shape()[0];
    let spec = PatchSpec::new(ctx.patch, [1, d, h, w])?;
    let tokens = unfold_foldfree(&tensor::reshape(&local, &[1, d, h, w])?, &spec)?;
    let [_, _, pa, n] = spec.patches_shape();
    let t = transformer_stack(&tensor::reshape(&tokens, &[d, pa, n])?, &p.layers, ctx)?;
    let t = layer_norm(&t, &p.global_norm, ctx.eps)?;
    let folded = fold_foldfree(&tensor::reshape(&t, &[1, d, pa, n])?, &spec)?;
    let folded = tensor::reshape(&folded, &[d, h, w])?;
    ctx.norm(&p.proj.apply(&folded, 1, 1)?, &p.proj_norm)
}

#[derive(Debug, Clone)]
pub struct BackboneOutput {
    /// Stem output followed by each stage output.
    pub taps: Vec<Tensor>,
    /// Final stage resampled to the heatmap grid; the generator input.
    pub features: Tensor,
}

pub fn backbone_forward(image: &Tensor, store: &WeightStore, cfg: &ModelConfig) -> Result<BackboneOutput> {
    let [c, h, w] = image.dims3("backbone_forward")?;
    if c != 3 || (h, w) != cfg.input_size {
        return Err(Error::shape(
            "backbone_forward",
            format!("image {:?}, expected [3, {}, {}]", image.shape(), cfg.input_size.0, cfg.input_size.1),
        ));
    }
    let ctx = BlockContext::from_config(cfg);
    let stem = ConvLayer::from_store(store, "stage0.0.conv")?;
    let mut x = ctx.act(&ctx.norm(&stem.apply(image, 2, 1)?, &NormLayer::from_store(store, "stage0.0.norm")?)?);
    let mut taps = vec![x.clone()];
    for (i, stage) in cfg.stages.iter().enumerate() {
        for blk in 0..stage.mv2_blocks {
            let stride = if blk == 0 { stage.stride } else { 1 };
            let p = Mv2Params::from_store(store, &format!("stage{}.{blk}", i + 1))?;
            x = mv2_block(&x, &p, stride, &ctx)?;
        }
        if let Some(attn) = stage.attention {
            let p = MobileVitParams::from_store(store, &format!("stage{}.{}", i + 1, stage.mv2_blocks), attn.depth)?;
            x = mobilevit_v2_block(&x, &p, &ctx)?;
        }
        taps.push(x.clone());
    }
    let features = tensor::upsample(&x, cfg.heatmap_size, cfg.upsample_mode)?;
    Ok(BackboneOutput { taps, features })
}
