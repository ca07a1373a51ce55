//! Attention gate, spatial and channel attention, and the co-attention gate.

use cafu_tensor::Var;

use crate::ctx::Ctx;
use crate::error::At;
use crate::nn::{Conv2d, ConvBn, Linear};
use crate::params::Builder;
use crate::{Error, Result};
use cafu_tensor::ops::Conv2dSpec;

/// Intermediate width of an attention gate feeding a stage with `out_channels`.
pub fn gate_width(out_channels: usize) -> usize {
    (out_channels / 2).max(8)
}

/// Gates `x` by a single-channel map computed from `x` and a gating signal `g`.
#[derive(Clone, Debug)]
pub struct AttentionGate {
    pub conv_x: ConvBn,
    pub conv_g: ConvBn,
    pub conv_psi: ConvBn,
    pub f_int: usize,
}

impl AttentionGate {
    pub fn new(b: &mut Builder, f_g: usize, f_x: usize, f_int: usize) -> Self {
        let one = Conv2dSpec::default();
        Self {
            conv_x: ConvBn::new(&mut b.sub("conv_x"), f_x, f_int, 1, one),
            conv_g: ConvBn::new(&mut b.sub("conv_g"), f_g, f_int, 1, one),
            conv_psi: ConvBn::new(&mut b.sub("conv_psi"), f_int, 1, 1, one),
            f_int,
        }
    }

    /// The coefficient map `α ∈ (0, 1)` with shape `[N, 1, H, W]`.
    pub fn coefficients(&self, ctx: &Ctx, g: &Var, x: &Var) -> Result<Var> {
        let (gs, xs) = (g.dims4()?, x.dims4()?);
        if gs[2..] != xs[2..] || gs[0] != xs[0] {
            return Err(Error::Shape {
                junction: "attention gate".into(),
                source: cafu_tensor::TensorError::Shape {
                    op: "attention_gate",
                    detail: format!("gate {:?} vs input {:?}", g.shape(), x.shape()),
                },
            });
        }
        let s = self.conv_x.forward(ctx, x)?.add(&self.conv_g.forward(ctx, g)?)?;
        Ok(self.conv_psi.forward(ctx, &s.relu())?.sigmoid())
    }

    pub fn forward(&self, ctx: &Ctx, g: &Var, x: &Var) -> Result<Var> {
        let alpha = self.coefficients(ctx, g, x)?;
        Ok(x.mul(&alpha)?)
    }
}

/// Reweights pixels by `σ(conv7×7([max_c f; mean_c f]))`.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub fn new(b: &mut Builder) -> Self {
        Self {
            conv: Conv2d::same(&mut b.sub("conv"), 2, 1, 7, true),
        }
    }

    pub fn gate(&self, ctx: &Ctx, f: &Var) -> Result<Var> {
        let pooled = Var::concat(&[&f.max_axis(1)?, &f.mean_axes(&[1])?], 1)?;
        Ok(self.conv.forward(ctx, &pooled)?.sigmoid())
    }

    pub fn forward(&self, ctx: &Ctx, f: &Var) -> Result<Var> {
        Ok(f.mul(&self.gate(ctx, f)?)?)
    }
}

/// Squeeze-and-excitation channel reweighting.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
}

impl ChannelAttention {
    pub fn new(b: &mut Builder, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels < reduction || !channels.is_multiple_of(reduction) {
            return Err(Error::config(format!(
                "channel attention over {channels} channels needs a reduction ratio dividing it (got {reduction})"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            fc1: Linear::new(&mut b.sub("fc1"), channels, hidden, true),
            fc2: Linear::new(&mut b.sub("fc2"), hidden, channels, true),
            channels,
        })
    }

    /// Per-channel gate `[N, C, 1, 1]`.
    pub fn gate(&self, ctx: &Ctx, f: &Var) -> Result<Var> {
        let [n, c, _, _] = f.dims4()?;
        let squeezed = f.mean_axes(&[2, 3])?.reshape(&[n, c])?;
        let h = self.fc1.forward(ctx, &squeezed)?.relu();
        let g = self.fc2.forward(ctx, &h)?.sigmoid();
        Ok(g.reshape(&[n, c, 1, 1])?)
    }

    pub fn forward(&self, ctx: &Ctx, f: &Var) -> Result<Var> {
        Ok(f.mul(&self.gate(ctx, f)?)?)
    }
}

/// Target spatial size both inputs of a fusion are brought to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignmentPolicy {
    pub target: usize,
}

/// Max-pools larger maps and bilinearly upsamples smaller ones to `target`.
/// Only power-of-two ratios are accepted.
pub fn align_to(x: &Var, target: usize) -> Result<Var> {
    let [_, _, h, w] = x.dims4()?;
    let err = || Error::Shape {
        junction: "align".into(),
        source: cafu_tensor::TensorError::Shape {
            op: "align_streams",
            detail: format!("cannot align {h}x{w} to {target}x{target} by a power-of-two ratio"),
        },
    };
    if h != w || target == 0 {
        return Err(err());
    }
    if h == target {
        Ok(x.clone())
    } else if h > target {
        if h % target != 0 || !(h / target).is_power_of_two() {
            return Err(err());
        }
        let k = h / target;
        Ok(x.max_pool2d(k, k, 0)?)
    } else {
        if !target.is_multiple_of(h) || !(target / h).is_power_of_two() {
            return Err(err());
        }
        Ok(x.resize_bilinear(target, target)?)
    }
}

pub fn align_streams(a: &Var, b: &Var, policy: AlignmentPolicy) -> Result<(Var, Var)> {
    Ok((align_to(a, policy.target)?, align_to(b, policy.target)?))
}

/// How a two-input fusion combines its aligned streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Two role-swapped attention gates, optionally followed by channel
    /// attention with the given reduction ratio.
    CoAttention { ca_reduction: Option<usize> },
    /// Concatenation followed by a width-preserving 1×1 projection.
    ConcatProject,
    /// Plain concatenation.
    Concat,
}

#[derive(Clone, Copy, Debug)]
pub struct CoAttentionSpec {
    pub a_channels: usize,
    pub b_channels: usize,
    pub f_int: usize,
    pub align: AlignmentPolicy,
    pub mode: FusionMode,
}

/// Two attention gates with swapped roles whose outputs are concatenated as
/// `[AG(g = a, x = b), AG(g = b, x = a)]`, optionally followed by channel
/// attention. Without gates the streams are concatenated as `[b, a]`.
#[derive(Clone, Debug)]
pub struct CoAttentionGate {
    pub gates: Option<(AttentionGate, AttentionGate)>,
    pub channel_attention: Option<ChannelAttention>,
    pub projection: Option<Conv2d>,
    pub align: AlignmentPolicy,
    pub out_channels: usize,
}

impl CoAttentionGate {
    pub fn new(b: &mut Builder, spec: CoAttentionSpec) -> Result<Self> {
        let width = spec.a_channels + spec.b_channels;
        let mut gate = Self {
            gates: None,
            channel_attention: None,
            projection: None,
            align: spec.align,
            out_channels: width,
        };
        match spec.mode {
            FusionMode::CoAttention { ca_reduction } => {
                gate.gates = Some((
                    AttentionGate::new(&mut b.sub("ag1"), spec.a_channels, spec.b_channels, spec.f_int),
                    AttentionGate::new(&mut b.sub("ag2"), spec.b_channels, spec.a_channels, spec.f_int),
                ));
                if let Some(r) = ca_reduction {
                    gate.channel_attention = Some(ChannelAttention::new(&mut b.sub("ca"), width, r)?);
                }
            }
            FusionMode::ConcatProject => {
                gate.projection = Some(Conv2d::pointwise(&mut b.sub("proj"), width, width, true));
            }
            FusionMode::Concat => {}
        }
        Ok(gate)
    }

    pub fn forward(&self, ctx: &Ctx, a: &Var, b: &Var) -> Result<Var> {
        let (a, b) = align_streams(a, b, self.align)?;
        let fused = match &self.gates {
            Some((ag1, ag2)) => {
                let gb = ag1.forward(ctx, &a, &b)?;
                let ga = ag2.forward(ctx, &b, &a)?;
                Var::concat(&[&gb, &ga], 1).at(|| "co-attention concat".into())?
            }
            None => Var::concat(&[&b, &a], 1).at(|| "fusion concat".into())?,
        };
        let fused = match &self.channel_attention {
            Some(ca) => ca.forward(ctx, &fused)?,
            None => fused,
        };
        match &self.projection {
            Some(p) => p.forward(ctx, &fused),
            None => Ok(fused),
        }
    }
}
