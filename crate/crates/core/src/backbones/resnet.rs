use cafu_tensor::ops::Conv2dSpec;
use cafu_tensor::Var;

use crate::config::BackboneLayout;
use crate::ctx::Ctx;
use crate::nn::ConvBn;
use crate::params::Builder;
use crate::Result;

/// Basic two-convolution residual unit with optional strided projection.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub downsample: Option<ConvBn>,
}

impl BasicBlock {
    pub fn new(b: &mut Builder, cin: usize, cout: usize, stride: usize) -> Self {
        Self {
            conv1: ConvBn::new(&mut b.sub("conv1"), cin, cout, 3, Conv2dSpec::new(stride, 1)),
            conv2: ConvBn::new(&mut b.sub("conv2"), cout, cout, 3, Conv2dSpec::new(1, 1)),
            downsample: (stride != 1 || cin != cout)
                .then(|| ConvBn::new(&mut b.sub("downsample"), cin, cout, 1, Conv2dSpec::new(stride, 0))),
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        let h = self.conv1.forward(ctx, x)?.relu();
        let h = self.conv2.forward(ctx, &h)?;
        let skip = match &self.downsample {
            Some(d) => d.forward(ctx, x)?,
            None => x.clone(),
        };
        Ok(h.add(&skip)?.relu())
    }
}

/// 18-layer residual trunk tapped after the stem and after layers 1–3.
#[derive(Clone, Debug)]
pub struct ResNetPyramid {
    pub stem: ConvBn,
    pub layers: Vec<Vec<BasicBlock>>,
    /// Fourth residual layer: counted as part of the trunk but never executed.
    pub dormant_layer: Option<Vec<BasicBlock>>,
}

impl ResNetPyramid {
    pub fn new(b: &mut Builder, in_channels: usize, layout: &BackboneLayout) -> Self {
        let ch = layout.cnn_channels;
        let stem = ConvBn::new(&mut b.sub("stem"), in_channels, ch[0], 7, Conv2dSpec::new(2, 3));
        let make_layer = |b: &mut Builder, idx: usize, cin: usize, cout: usize, stride: usize| {
            let mut lb = b.sub(&format!("layer{idx}"));
            (0..layout.cnn_blocks)
                .map(|k| {
                    let (ci, s) = if k == 0 { (cin, stride) } else { (cout, 1) };
                    BasicBlock::new(&mut lb.sub(&k.to_string()), ci, cout, s)
                })
                .collect::<Vec<_>>()
        };
        let layers = vec![
            make_layer(b, 1, ch[0], ch[1], 1),
            make_layer(b, 2, ch[1], ch[2], 2),
            make_layer(b, 3, ch[2], ch[3], 2),
        ];
        let dormant_layer = layout
            .cnn_keeps_layer4
            .then(|| make_layer(b, 4, ch[3], ch[3] * 2, 2));
        Self {
            stem,
            layers,
            dormant_layer,
        }
    }

    /// `[r0, r1, r2, r3]` at 1/2, 1/4, 1/8 and 1/16 of the input resolution.
    pub fn forward(&self, ctx: &Ctx, image: &Var) -> Result<[Var; 4]> {
        let r0 = self.stem.forward(ctx, image)?.relu();
        let mut h = r0.max_pool2d(3, 2, 1)?;
        let mut taps = Vec::with_capacity(3);
        for layer in &self.layers {
            for block in layer {
                h = block.forward(ctx, &h)?;
            }
            taps.push(h.clone());
        }
        let [r1, r2, r3]: [Var; 3] = taps.try_into().expect("three layers");
        Ok([r0, r1, r2, r3])
    }
}
