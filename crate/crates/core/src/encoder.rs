//! Three-path encoder: CNN and transformer pyramids fused stage by stage into
//! the main branch, followed by the bottleneck.

use cafu_tensor::Var;

use crate::attention::{
    align_to, gate_width, AlignmentPolicy, AttentionGate, CoAttentionGate, CoAttentionSpec, FusionMode,
    SpatialAttention,
};
use crate::backbones::{PvtPyramid, ResNetPyramid};
use crate::config::ModelConfig;
use crate::ctx::Ctx;
use crate::error::At;
use crate::nn::ResBlock;
use crate::params::Builder;
use crate::ssm::Mixer;
use crate::Result;

/// How the CNN feature enters a fusion stage.
#[derive(Clone, Debug)]
pub enum CnnInjection {
    /// `AG(g = SA(r), x = fused)`.
    Gate { sa: SpatialAttention, gate: AttentionGate },
    /// `r` is concatenated to the fused streams.
    Concat,
    /// The CNN path is absent.
    None,
}

/// One fusion stage producing `x_{i+1}` from `x_i`, `t_i` and `r_i`.
#[derive(Clone, Debug)]
pub struct FusionStage {
    pub fuse: CoAttentionGate,
    pub cnn: CnnInjection,
    pub mixer: Mixer,
    pub target: usize,
}

impl FusionStage {
    pub fn forward(&self, ctx: &Ctx, x: &Var, t: &Var, r: Option<&Var>) -> Result<Var> {
        let fused = self.fuse.forward(ctx, x, t)?;
        let fused = match (&self.cnn, r) {
            (CnnInjection::Gate { sa, gate }, Some(r)) => gate.forward(ctx, &sa.forward(ctx, r)?, &fused)?,
            (CnnInjection::Concat, Some(r)) => {
                Var::concat(&[&fused, &align_to(r, self.target)?], 1).at(|| "cnn concat".into())?
            }
            _ => fused,
        };
        self.mixer.forward(ctx, &fused)
    }
}

/// Fuses `x_3` with the upsampled `x_4`, mixes, and pools to the bottleneck size.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub fuse: CoAttentionGate,
    pub mixer: Mixer,
    pub pool: usize,
}

impl Bottleneck {
    /// Returns the pre-pooling map and `x_5`.
    pub fn forward(&self, ctx: &Ctx, x3: &Var, x4: &Var) -> Result<(Var, Var)> {
        let mixed = self.mixer.forward(ctx, &self.fuse.forward(ctx, x3, x4)?)?;
        let pooled = mixed.adaptive_avg_pool2d(self.pool, self.pool)?;
        Ok((mixed, pooled))
    }
}

/// Every named encoder tensor of one forward pass.
#[derive(Clone, Debug)]
pub struct EncoderOutputs {
    /// `x_0..x_5`.
    pub x: Vec<Var>,
    pub t: [Var; 4],
    pub r: Option<[Var; 4]>,
    pub x0_pooled: Var,
    pub bottleneck_map: Var,
}

impl EncoderOutputs {
    /// `(name, tensor)` pairs in shape-contract order.
    pub fn named(&self) -> Vec<(String, &Var)> {
        let mut rows = vec![("x0".to_string(), &self.x[0])];
        rows.extend(self.t.iter().enumerate().map(|(i, v)| (format!("t{i}"), v)));
        if let Some(r) = &self.r {
            rows.extend(r.iter().enumerate().map(|(i, v)| (format!("r{i}"), v)));
        }
        rows.push(("x0_pooled".into(), &self.x0_pooled));
        rows.extend((1..=4).map(|i| (format!("x{i}"), &self.x[i])));
        rows.push(("coamamba".into(), &self.bottleneck_map));
        rows.push(("x5".into(), &self.x[5]));
        rows
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cnn: Option<ResNetPyramid>,
    pub transformer: PvtPyramid,
    pub stem: ResBlock,
    pub stages: Vec<FusionStage>,
    pub bottleneck: Bottleneck,
}

impl Encoder {
    pub fn new(b: &mut Builder, cfg: &ModelConfig) -> Result<Self> {
        let flags = cfg.ablation;
        let layout = cfg.backbones();
        let x = cfg.main_channels();
        let t = layout.vit_dims;
        let r = layout.cnn_channels;
        let fusion_mode = |block_enabled: bool| match (block_enabled, flags.use_coag) {
            (true, true) => FusionMode::CoAttention {
                ca_reduction: Some(cfg.ca_reduction),
            },
            (true, false) => FusionMode::ConcatProject,
            (false, _) => FusionMode::Concat,
        };
        let cnn = flags
            .use_resnet_branch
            .then(|| ResNetPyramid::new(&mut b.sub("cnn"), cfg.in_channels, &layout));
        let transformer = PvtPyramid::new(&mut b.sub("transformer"), cfg.in_channels, &layout);
        let stem = ResBlock::new(&mut b.sub("stem"), cfg.in_channels, x[0]);
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let mut sb = b.sub(&format!("coasmamba{}", i + 1));
            let target = cfg.input_size >> (i + 1);
            let out = x[i + 1];
            let enabled = flags.use_coasmamba;
            let fuse = CoAttentionGate::new(
                &mut sb.sub("coag"),
                CoAttentionSpec {
                    a_channels: x[i],
                    b_channels: t[i],
                    f_int: gate_width(out),
                    align: AlignmentPolicy { target },
                    mode: fusion_mode(enabled),
                },
            )?;
            let mut width = fuse.out_channels;
            let cnn = match (flags.use_resnet_branch, enabled) {
                (false, _) => CnnInjection::None,
                (true, true) => CnnInjection::Gate {
                    sa: SpatialAttention::new(&mut sb.sub("sa")),
                    gate: AttentionGate::new(&mut sb.sub("ag"), r[i], width, gate_width(out)),
                },
                (true, false) => {
                    width += r[i];
                    CnnInjection::Concat
                }
            };
            let mixer = Mixer::new(
                &mut sb.sub("mixer"),
                width,
                out,
                enabled && flags.use_mambaconv,
                cfg.ssm_expand,
                cfg.ssm_state_dim,
            );
            stages.push(FusionStage {
                fuse,
                cnn,
                mixer,
                target,
            });
        }
        let mut bb = b.sub("coamamba");
        let fuse = CoAttentionGate::new(
            &mut bb.sub("coag"),
            CoAttentionSpec {
                a_channels: x[3],
                b_channels: x[4],
                f_int: gate_width(x[5]),
                align: AlignmentPolicy {
                    target: cfg.input_size / 8,
                },
                mode: fusion_mode(flags.use_coamamba),
            },
        )?;
        let mixer = Mixer::new(
            &mut bb.sub("mixer"),
            fuse.out_channels,
            x[5],
            flags.use_coamamba && flags.use_mambaconv,
            cfg.ssm_expand,
            cfg.ssm_state_dim,
        );
        Ok(Self {
            cnn,
            transformer,
            stem,
            stages,
            bottleneck: Bottleneck {
                fuse,
                mixer,
                pool: cfg.bottleneck_pool,
            },
        })
    }

    pub fn forward(&self, ctx: &Ctx, image: &Var) -> Result<EncoderOutputs> {
        let t = ctx.scoped("transformer", || self.transformer.forward(ctx, image))?;
        let r = match &self.cnn {
            Some(cnn) => Some(ctx.scoped("cnn", || cnn.forward(ctx, image))?),
            None => None,
        };
        let x0 = ctx.scoped("stem", || self.stem.forward(ctx, image))?;
        ctx.observe("x0", &x0)?;
        for (i, v) in t.iter().enumerate() {
            ctx.observe(&format!("t{i}"), v)?;
        }
        if let Some(r) = &r {
            for (i, v) in r.iter().enumerate() {
                ctx.observe(&format!("r{i}"), v)?;
            }
        }
        let x0_pooled = ctx.scoped("coasmamba1", || align_to(&x0, self.stages[0].target))?;
        ctx.observe("x0_pooled", &x0_pooled)?;
        let mut xs = vec![x0];
        let mut current = x0_pooled.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            let name = format!("coasmamba{}", i + 1);
            let next = ctx.scoped(&name, || stage.forward(ctx, &current, &t[i], r.as_ref().map(|r| &r[i])))?;
            ctx.observe(&format!("x{}", i + 1), &next)?;
            xs.push(next.clone());
            current = next;
        }
        let (bottleneck_map, x5) = ctx.scoped("coamamba", || self.bottleneck.forward(ctx, &xs[3], &xs[4]))?;
        ctx.observe("coamamba", &bottleneck_map)?;
        ctx.observe("x5", &x5)?;
        xs.push(x5);
        Ok(EncoderOutputs {
            x: xs,
            t,
            r,
            x0_pooled,
            bottleneck_map,
        })
    }
}
