use cafu_tensor::ops::Conv2dSpec;
use cafu_tensor::Var;

use crate::config::BackboneLayout;
use crate::ctx::Ctx;
use crate::nn::{Conv2d, LayerNorm, Linear};
use crate::params::Builder;
use crate::Result;

/// `[B, C, H, W]` → `[B, H·W, C]`.
fn to_tokens(x: &Var) -> Result<Var> {
    let [b, c, h, w] = x.dims4()?;
    Ok(x.reshape(&[b, c, h * w])?.permute(&[0, 2, 1])?)
}

/// `[B, H·W, C]` → `[B, C, H, W]`.
fn to_map(t: &Var, h: usize, w: usize) -> Result<Var> {
    let [b, _, c] = *t.shape() else {
        unreachable!("token tensors are rank 3")
    };
    Ok(t.permute(&[0, 2, 1])?.reshape(&[b, c, h, w])?)
}

/// Key/value source of the attention.
#[derive(Clone, Debug)]
pub enum Reduction {
    /// Full-resolution keys.
    None,
    /// Strided convolution by the ratio, then layer norm.
    Strided { conv: Conv2d, norm: LayerNorm },
    /// Fixed-size average pooling, 1×1 convolution, layer norm and GELU.
    Pooled { pool: usize, conv: Conv2d, norm: LayerNorm },
}

#[derive(Clone, Debug)]
pub struct SpatialReductionAttention {
    pub q: Linear,
    pub kv: Linear,
    pub proj: Linear,
    pub reduction: Reduction,
    pub heads: usize,
    pub dim: usize,
}

impl SpatialReductionAttention {
    pub fn new(b: &mut Builder, dim: usize, heads: usize, sr: usize, linear: bool, pool: usize) -> Self {
        let reduction = if linear {
            Reduction::Pooled {
                pool,
                conv: Conv2d::pointwise(&mut b.sub("sr"), dim, dim, true),
                norm: LayerNorm::new(&mut b.sub("norm"), dim, 2),
            }
        } else if sr > 1 {
            Reduction::Strided {
                conv: Conv2d::new(&mut b.sub("sr"), dim, dim, sr, Conv2dSpec::new(sr, 0), true),
                norm: LayerNorm::new(&mut b.sub("norm"), dim, 2),
            }
        } else {
            Reduction::None
        };
        Self {
            q: Linear::new(&mut b.sub("q"), dim, dim, true),
            kv: Linear::new(&mut b.sub("kv"), dim, 2 * dim, true),
            proj: Linear::new(&mut b.sub("proj"), dim, dim, true),
            reduction,
            heads,
            dim,
        }
    }

    fn split_heads(&self, t: &Var) -> Result<Var> {
        let [b, n, c] = *t.shape() else {
            unreachable!("token tensors are rank 3")
        };
        let d = c / self.heads;
        Ok(t.reshape(&[b, n, self.heads, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b * self.heads, n, d])?)
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var, h: usize, w: usize) -> Result<Var> {
        let [b, n, c] = *x.shape() else {
            unreachable!("token tensors are rank 3")
        };
        let q = self.q.forward(ctx, x)?;
        let source = match &self.reduction {
            Reduction::None => x.clone(),
            Reduction::Strided { conv, norm } => norm.forward(ctx, &to_tokens(&conv.forward(ctx, &to_map(x, h, w)?)?)?)?,
            Reduction::Pooled { pool, conv, norm } => {
                let pooled = to_map(x, h, w)?.adaptive_avg_pool2d(*pool, *pool)?;
                norm.forward(ctx, &to_tokens(&conv.forward(ctx, &pooled)?)?)?.gelu()
            }
        };
        let nk = source.shape()[1];
        let kv = self.kv.forward(ctx, &source)?;
        let k = self.split_heads(&kv.narrow(2, 0, c)?)?;
        let v = self.split_heads(&kv.narrow(2, c, c)?)?;
        let q = self.split_heads(&q)?;
        let d = c / self.heads;
        let scores = q.matmul_t(&k, false, true)?.scale(1.0 / (d as f64).sqrt()).softmax(2)?;
        let out = scores
            .matmul(&v)?
            .reshape(&[b, self.heads, n, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, n, c])?;
        ctx.add_macs((2 * b * n * nk * c) as u64);
        self.proj.forward(ctx, &out)
    }
}

#[derive(Clone, Debug)]
pub struct ConvMlp {
    pub fc1: Linear,
    pub dw_conv: Conv2d,
    pub fc2: Linear,
    pub relu_after_fc1: bool,
}

impl ConvMlp {
    pub fn new(b: &mut Builder, dim: usize, hidden: usize, linear: bool) -> Self {
        Self {
            fc1: Linear::new(&mut b.sub("fc1"), dim, hidden, true),
            dw_conv: Conv2d::new(&mut b.sub("dwconv"), hidden, hidden, 3, Conv2dSpec::new(1, 1).grouped(hidden), true),
            fc2: Linear::new(&mut b.sub("fc2"), hidden, dim, true),
            relu_after_fc1: linear,
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var, h: usize, w: usize) -> Result<Var> {
        let mut t = self.fc1.forward(ctx, x)?;
        if self.relu_after_fc1 {
            t = t.relu();
        }
        let t = to_tokens(&self.dw_conv.forward(ctx, &to_map(&t, h, w)?)?)?.gelu();
        self.fc2.forward(ctx, &t)
    }
}

#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: SpatialReductionAttention,
    pub norm2: LayerNorm,
    pub mlp: ConvMlp,
}

impl TransformerBlock {
    pub fn forward(&self, ctx: &Ctx, x: &Var, h: usize, w: usize) -> Result<Var> {
        let x = x.add(&self.attn.forward(ctx, &self.norm1.forward(ctx, x)?, h, w)?)?;
        Ok(x.add(&self.mlp.forward(ctx, &self.norm2.forward(ctx, &x)?, h, w)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct PvtStage {
    pub patch_embed: Conv2d,
    pub embed_norm: LayerNorm,
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
}

/// Four-stage pyramid transformer with overlapping patch embeddings.
#[derive(Clone, Debug)]
pub struct PvtPyramid {
    pub stages: Vec<PvtStage>,
}

impl PvtPyramid {
    pub fn new(b: &mut Builder, in_channels: usize, layout: &BackboneLayout) -> Self {
        let mut cin = in_channels;
        let stages = (0..4)
            .map(|i| {
                let mut sb = b.sub(&format!("stage{}", i + 1));
                let dim = layout.vit_dims[i];
                let (k, s) = if i == 0 { (7, 4) } else { (3, 2) };
                let patch_embed = Conv2d::new(&mut sb.sub("patch_embed"), cin, dim, k, Conv2dSpec::new(s, k / 2), true);
                let embed_norm = LayerNorm::new(&mut sb.sub("embed_norm"), dim, 2);
                let blocks = (0..layout.vit_depths[i])
                    .map(|j| {
                        let mut bb = sb.sub(&format!("block{j}"));
                        TransformerBlock {
                            norm1: LayerNorm::new(&mut bb.sub("norm1"), dim, 2),
                            attn: SpatialReductionAttention::new(
                                &mut bb.sub("attn"),
                                dim,
                                layout.vit_heads[i],
                                layout.vit_sr_ratios[i],
                                layout.vit_linear,
                                layout.vit_pool,
                            ),
                            norm2: LayerNorm::new(&mut bb.sub("norm2"), dim, 2),
                            mlp: ConvMlp::new(&mut bb.sub("mlp"), dim, dim * layout.vit_mlp_ratios[i], layout.vit_linear),
                        }
                    })
                    .collect();
                let norm = LayerNorm::new(&mut sb.sub("norm"), dim, 2);
                cin = dim;
                PvtStage {
                    patch_embed,
                    embed_norm,
                    blocks,
                    norm,
                }
            })
            .collect();
        Self { stages }
    }

    /// `[t0, t1, t2, t3]` at 1/4, 1/8, 1/16 and 1/32 of the input resolution.
    pub fn forward(&self, ctx: &Ctx, image: &Var) -> Result<[Var; 4]> {
        let mut x = image.clone();
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            let map = stage.patch_embed.forward(ctx, &x)?;
            let [_, _, h, w] = map.dims4()?;
            let mut t = stage.embed_norm.forward(ctx, &to_tokens(&map)?)?;
            for block in &stage.blocks {
                t = block.forward(ctx, &t, h, w)?;
            }
            x = to_map(&stage.norm.forward(ctx, &t)?, h, w)?;
            outs.push(x.clone());
        }
        Ok(outs.try_into().expect("four stages"))
    }
}
