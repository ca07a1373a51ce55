//! Upsampling decoder with double co-attention skip fusion.

use cafu_tensor::Var;

use crate::attention::{gate_width, AlignmentPolicy, CoAttentionGate, CoAttentionSpec, FusionMode};
use crate::config::ModelConfig;
use crate::ctx::Ctx;
use crate::nn::ResBlock;
use crate::params::Builder;
use crate::Result;

/// Fuses two encoder skips, then the skip result with the decoder stream, and
/// refines with a double convolution.
#[derive(Clone, Debug)]
pub struct DoubleLCoA {
    pub skip_fuse: CoAttentionGate,
    pub stream_fuse: CoAttentionGate,
    pub conv: ResBlock,
}

/// Channel widths and resolution of one [`DoubleLCoA`].
#[derive(Clone, Copy, Debug)]
pub struct DoubleLCoASpec {
    pub lo_channels: usize,
    pub hi_channels: usize,
    pub stream_channels: usize,
    pub out_channels: usize,
    pub resolution: usize,
    pub mode: FusionMode,
}

impl DoubleLCoA {
    pub fn new(b: &mut Builder, spec: DoubleLCoASpec) -> Result<Self> {
        let align = AlignmentPolicy {
            target: spec.resolution,
        };
        let f_int = gate_width(spec.out_channels);
        let skip_fuse = CoAttentionGate::new(
            &mut b.sub("skip_fuse"),
            CoAttentionSpec {
                a_channels: spec.lo_channels,
                b_channels: spec.hi_channels,
                f_int,
                align,
                mode: spec.mode,
            },
        )?;
        let stream_fuse = CoAttentionGate::new(
            &mut b.sub("stream_fuse"),
            CoAttentionSpec {
                a_channels: spec.stream_channels,
                b_channels: skip_fuse.out_channels,
                f_int,
                align,
                mode: spec.mode,
            },
        )?;
        let conv = ResBlock::new(&mut b.sub("conv"), stream_fuse.out_channels, spec.out_channels);
        Ok(Self {
            skip_fuse,
            stream_fuse,
            conv,
        })
    }

    /// `lo` is the shallower skip; `d` is the upsampled decoder stream at `lo`'s resolution.
    pub fn forward(&self, ctx: &Ctx, lo: &Var, hi: &Var, d: &Var) -> Result<Var> {
        let s = self.skip_fuse.forward(ctx, lo, hi)?;
        let f = self.stream_fuse.forward(ctx, d, &s)?;
        self.conv.forward(ctx, &f)
    }
}

/// Named decoder tensors: `d4, dec1, d3, dec2, d2, dec3, d1, d0`.
#[derive(Clone, Debug)]
pub struct DecoderOutputs {
    pub named: Vec<(String, Var)>,
}

impl DecoderOutputs {
    /// The last decoder output, `d_0`.
    pub fn last(&self) -> &Var {
        &self.named.last().expect("four decoder stages").1
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub stages: Vec<DoubleLCoA>,
}

impl Decoder {
    pub fn new(b: &mut Builder, cfg: &ModelConfig) -> Result<Self> {
        let x = cfg.main_channels();
        let mode = match (cfg.ablation.use_doublelcoa, cfg.ablation.use_coag) {
            (true, true) => FusionMode::CoAttention { ca_reduction: None },
            (true, false) => FusionMode::ConcatProject,
            (false, _) => FusionMode::Concat,
        };
        let mut stream = x[5];
        let stages = (0..4)
            .map(|j| {
                let lo = 3 - j;
                let spec = DoubleLCoASpec {
                    lo_channels: x[lo],
                    hi_channels: x[lo + 1],
                    stream_channels: stream,
                    out_channels: x[lo],
                    resolution: cfg.input_size >> lo,
                    mode,
                };
                stream = x[lo];
                DoubleLCoA::new(&mut b.sub(&format!("doublelcoa{}", j + 1)), spec)
            })
            .collect::<Result<_>>()?;
        Ok(Self { stages })
    }

    /// Runs the four (upsample, fuse) stages from `x_5` with skips `x_0..x_4`.
    pub fn forward(&self, ctx: &Ctx, x: &[Var]) -> Result<DecoderOutputs> {
        let mut named = Vec::with_capacity(8);
        let mut stream = x[5].clone();
        for (j, stage) in self.stages.iter().enumerate() {
            let lo = 3 - j;
            let d = stream.upsample_bilinear(2)?;
            ctx.observe(&format!("d{}", 4 - j), &d)?;
            named.push((format!("d{}", 4 - j), d.clone()));
            let name = format!("doublelcoa{}", j + 1);
            stream = ctx.scoped(&name, || stage.forward(ctx, &x[lo], &x[lo + 1], &d))?;
            let out_name = if j == 3 { "d0".to_string() } else { format!("dec{}", j + 1) };
            ctx.observe(&out_name, &stream)?;
            named.push((out_name, stream.clone()));
        }
        Ok(DecoderOutputs { named })
    }
}
