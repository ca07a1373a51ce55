//! Parameterised layers shared by every block.

use cafu_tensor::ops::Conv2dSpec;
use cafu_tensor::{Tensor, Var};

use crate::ctx::{Ctx, Mode};
use crate::error::At;
use crate::params::{BatchNormUpdate, Builder, ParamId};
use crate::Result;

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    /// Fan-in uniform initialisation.
    pub fn new(b: &mut Builder, cin: usize, cout: usize, kernel: usize, spec: Conv2dSpec, bias: bool) -> Self {
        let groups = spec.groups.max(1);
        let fan_in = (cin / groups * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let weight = b.uniform("weight", &[cout, cin / groups, kernel, kernel], bound);
        let bias = bias.then(|| b.uniform("bias", &[cout], bound));
        Self {
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
            kernel,
            spec,
        }
    }

    pub fn pointwise(b: &mut Builder, cin: usize, cout: usize, bias: bool) -> Self {
        Self::new(b, cin, cout, 1, Conv2dSpec::default(), bias)
    }

    /// Stride-1 convolution with "same" padding.
    pub fn same(b: &mut Builder, cin: usize, cout: usize, kernel: usize, bias: bool) -> Self {
        Self::new(b, cin, cout, kernel, Conv2dSpec::new(1, kernel / 2), bias)
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let bias = self.bias.map(|id| ctx.param(id));
        let y = x
            .conv2d(&w, bias.as_ref(), self.spec)
            .at(|| ctx.store().name(self.weight).to_string())?;
        let [n, _, ho, wo] = y.dims4()?;
        ctx.add_macs(conv_macs(self.in_channels, self.out_channels, self.kernel, self.spec.groups, ho * wo) * n as u64);
        Ok(y)
    }
}

pub fn conv_macs(cin: usize, cout: usize, kernel: usize, groups: usize, out_pixels: usize) -> u64 {
    (cout * (cin / groups.max(1)) * kernel * kernel * out_pixels) as u64
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(b: &mut Builder, channels: usize) -> Self {
        Self {
            gamma: b.constant("weight", &[channels], 1.0),
            beta: b.constant("bias", &[channels], 0.0),
            running_mean: b.buffer("running_mean", Tensor::zeros(&[channels])),
            running_var: b.buffer("running_var", Tensor::ones(&[channels])),
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let name = || ctx.store().name(self.gamma).to_string();
        let y = match ctx.mode() {
            Mode::Train => {
                let (y, stats) = x.batch_norm(&gamma, &beta, None, BN_EPS).at(name)?;
                if let Some(stats) = stats {
                    ctx.push_bn_update(BatchNormUpdate {
                        running_mean: self.running_mean,
                        running_var: self.running_var,
                        stats,
                    });
                }
                y
            }
            Mode::Eval => {
                let store = ctx.store();
                let mean = store.value(self.running_mean).data();
                let var = store.value(self.running_var).data();
                x.batch_norm(&gamma, &beta, Some((mean, var)), BN_EPS).at(name)?.0
            }
        };
        ctx.add_macs(2 * x.value().numel() as u64);
        Ok(y)
    }
}

/// Bias-free convolution followed by batch normalisation (whose shift makes a
/// convolution bias redundant).
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBn {
    pub fn new(b: &mut Builder, cin: usize, cout: usize, kernel: usize, spec: Conv2dSpec) -> Self {
        Self {
            conv: Conv2d::new(&mut b.sub("conv"), cin, cout, kernel, spec, false),
            bn: BatchNorm2d::new(&mut b.sub("bn"), cout),
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        self.bn.forward(ctx, &self.conv.forward(ctx, x)?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(b: &mut Builder, fin: usize, fout: usize, bias: bool) -> Self {
        let bound = 1.0 / (fin as f64).sqrt();
        Self {
            weight: b.uniform("weight", &[fout, fin], bound),
            bias: bias.then(|| b.uniform("bias", &[fout], bound)),
            in_features: fin,
            out_features: fout,
        }
    }

    /// Applies the map over the last axis of `x`.
    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let bias = self.bias.map(|id| ctx.param(id));
        let y = x
            .linear(&w, bias.as_ref())
            .at(|| ctx.store().name(self.weight).to_string())?;
        let rows = x.value().numel() / self.in_features;
        ctx.add_macs((rows * self.in_features * self.out_features) as u64);
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub axis: usize,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, features: usize, axis: usize) -> Self {
        Self {
            gamma: b.constant("weight", &[features], 1.0),
            beta: b.constant("bias", &[features], 0.0),
            axis,
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        let y = x
            .layer_norm(self.axis, &ctx.param(self.gamma), &ctx.param(self.beta), LN_EPS)
            .at(|| ctx.store().name(self.gamma).to_string())?;
        ctx.add_macs(2 * x.value().numel() as u64);
        Ok(y)
    }
}

/// Two 3×3 conv → BN → ReLU stages plus a skip path (1×1 conv + BN when the
/// width changes). Serves as both the double-convolution block and the
/// residual block.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub first: ConvBn,
    pub second: ConvBn,
    pub skip: Option<ConvBn>,
}

impl ResBlock {
    pub fn new(b: &mut Builder, cin: usize, cout: usize) -> Self {
        let same = Conv2dSpec::new(1, 1);
        Self {
            first: ConvBn::new(&mut b.sub("conv1"), cin, cout, 3, same),
            second: ConvBn::new(&mut b.sub("conv2"), cout, cout, 3, same),
            skip: (cin != cout).then(|| ConvBn::new(&mut b.sub("skip"), cin, cout, 1, Conv2dSpec::default())),
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        let h = self.first.forward(ctx, x)?.relu();
        let h = self.second.forward(ctx, &h)?.relu();
        let skip = match &self.skip {
            Some(p) => p.forward(ctx, x)?,
            None => x.clone(),
        };
        Ok(h.add(&skip)?)
    }
}
