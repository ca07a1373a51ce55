//! Criterion routines shared by the acceptance runner and the regular tests.

use cafu_tensor::{Tape, Tensor, Var};
use mambacafu::attention::{
    AlignmentPolicy, AttentionGate, ChannelAttention, CoAttentionGate, CoAttentionSpec, FusionMode, SpatialAttention,
};
use mambacafu::ctx::{Ctx, Mode};
use mambacafu::decoder::{DoubleLCoA, DoubleLCoASpec};
use mambacafu::harness::complexity::block_of;
use mambacafu::losses::{bce_loss, combined_loss, dice_loss, DICE_SMOOTH};
use mambacafu::metrics::{accuracy, dsc, hd95, iou, BinaryMask, Spacing};
use mambacafu::ssm::{scan_forward, MambaConv, ScanDims, ScanInputs, Ss2dBlock};
use mambacafu::{MambaCafu, ModelConfig, Variant};
use num_traits::Float;
use rand::Rng;

use super::*;

pub const GRAD_STEP: f64 = 1e-5;
pub const BLOCK_TOL: f64 = 1e-4;
/// Per-tensor bound; looser because small scan-parameter gradients sit close
/// to the rounding noise of the difference quotient.
pub const TENSOR_TOL: f64 = 1e-3;
pub const END_TO_END_TOL: f64 = 1e-3;
/// Smaller than the block step so that fewer ReLU and max-pool kinks of the
/// full network fall inside the difference interval.
pub const END_TO_END_STEP: f64 = 1e-6;

/// `(block, seed, report)` for every block and seed.
pub fn gradient_suite(seeds: std::ops::Range<u64>) -> Vec<(&'static str, u64, BlockGradReport)> {
    let mut out = Vec::new();
    for seed in seeds {
        let s = seed * 7919;
        let (ag, mut store) = build(s, |b| AttentionGate::new(b, 3, 4, 4));
        let inputs = [randn(&[2, 3, 5, 5], s + 1), randn(&[2, 4, 5, 5], s + 2)];
        out.push((
            "attention_gate",
            seed,
            check_block(&mut store, &inputs, GRAD_STEP, s, |ctx, v| ag.forward(ctx, &v[0], &v[1])),
        ));

        let (sa, mut store) = build(s, SpatialAttention::new);
        let inputs = [randn(&[2, 4, 5, 5], s + 3)];
        out.push((
            "spatial_attention",
            seed,
            check_block(&mut store, &inputs, GRAD_STEP, s, |ctx, v| sa.forward(ctx, &v[0])),
        ));

        let (ca, mut store) = build(s, |b| ChannelAttention::new(b, 8, 4).expect("valid reduction"));
        let inputs = [randn(&[2, 8, 3, 3], s + 4)];
        out.push((
            "channel_attention",
            seed,
            check_block(&mut store, &inputs, GRAD_STEP, s, |ctx, v| ca.forward(ctx, &v[0])),
        ));

        let (coag, mut store) = build(s, |b| {
            CoAttentionGate::new(
                b,
                CoAttentionSpec {
                    a_channels: 4,
                    b_channels: 4,
                    f_int: 4,
                    align: AlignmentPolicy { target: 4 },
                    mode: FusionMode::CoAttention { ca_reduction: Some(4) },
                },
            )
            .expect("valid spec")
        });
        let inputs = [randn(&[2, 4, 8, 8], s + 5), randn(&[2, 4, 2, 2], s + 6)];
        out.push((
            "co_attention_gate",
            seed,
            check_block(&mut store, &inputs, GRAD_STEP, s, |ctx, v| coag.forward(ctx, &v[0], &v[1])),
        ));

        let (ss2d, mut store) = build(s, |b| Ss2dBlock::new(b, 3, 2, 4));
        let inputs = [randn(&[2, 3, 3, 4], s + 7)];
        out.push((
            "ss2d",
            seed,
            check_block(&mut store, &inputs, GRAD_STEP, s, |ctx, v| ss2d.forward(ctx, &v[0])),
        ));

        let (mc, mut store) = build(s, |b| MambaConv::new(b, 3, 5, 2, 4));
        let inputs = [randn(&[2, 3, 4, 4], s + 8)];
        out.push((
            "mamba_conv",
            seed,
            check_block(&mut store, &inputs, GRAD_STEP, s, |ctx, v| mc.forward(ctx, &v[0])),
        ));

        let (dl, mut store) = build(s, |b| {
            DoubleLCoA::new(
                b,
                DoubleLCoASpec {
                    lo_channels: 4,
                    hi_channels: 6,
                    stream_channels: 5,
                    out_channels: 4,
                    resolution: 4,
                    mode: FusionMode::CoAttention { ca_reduction: None },
                },
            )
            .expect("valid spec")
        });
        let inputs = [randn(&[2, 4, 4, 4], s + 9), randn(&[2, 6, 2, 2], s + 10), randn(&[2, 5, 4, 4], s + 11)];
        out.push((
            "double_l_coa",
            seed,
            check_block(&mut store, &inputs, GRAD_STEP, s, |ctx, v| dl.forward(ctx, &v[0], &v[1], &v[2])),
        ));
    }
    out
}

/// Tiny-model loss gradient against central differences at three sampled
/// scalars of each top-level block: `(block, relative error)`.
pub fn end_to_end_gradients(seed: u64) -> Vec<(String, f64)> {
    let mut cfg = ModelConfig::tiny(Variant::V1);
    cfg.seed = seed;
    let (model, mut store) = MambaCafu::new(&cfg).expect("tiny model");
    let size = cfg.input_size;
    let image = Tensor::uniform(&[2, cfg.in_channels, size, size], 0.0, 1.0, &mut rng(seed + 1));
    let mut r = rng(seed + 2);
    let labels: Vec<u8> = (0..2 * size * size).map(|_| r.random_range(0..cfg.num_classes as u8)).collect();
    let loss_of = |ctx: &Ctx| -> Var {
        let logits = model.forward(ctx, &Var::constant(image.clone())).expect("forward");
        combined_loss(&logits, &labels, 0.5).expect("loss")
    };
    let grads: std::collections::HashMap<_, _> = {
        let tape = Tape::new();
        let ctx = Ctx::new(&store, Mode::Train, Some(tape.clone()));
        let loss = loss_of(&ctx);
        ctx.param_grads(&tape.backward(&loss).expect("backward")).into_iter().collect()
    };
    let mut by_block: std::collections::BTreeMap<String, Vec<_>> = Default::default();
    for id in store.trainable_ids() {
        by_block.entry(block_of(store.name(id)).to_string()).or_default().push(id);
    }
    let mut out = Vec::new();
    for (block, ids) in by_block {
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for _ in 0..3 {
            let id = ids[r.random_range(0..ids.len())];
            let k = r.random_range(0..store.value(id).numel());
            analytic.push(grads.get(&id).map_or(0.0, |g: &Tensor| g.data()[k]));
            let orig = store.value(id).data()[k];
            let mut at = |v: f64| {
                store.value_mut(id).data_mut()[k] = v;
                loss_of(&Ctx::new(&store, Mode::Train, None)).value().data()[0]
            };
            let plus = at(orig + END_TO_END_STEP);
            let minus = at(orig - END_TO_END_STEP);
            at(orig);
            numeric.push((plus - minus) / (2.0 * END_TO_END_STEP));
        }
        out.push((block, relative_error(&analytic, &numeric)));
    }
    out
}

/// Largest deviation of the blocked scan from the sequential reference over
/// `instances` random problems, in `f32` and in `f64`.
pub fn scan_oracle(instances: u64, max_len: usize, state: usize) -> (f64, f64) {
    fn run<F: Float>(case: &ScanCase) -> f64 {
        let (u, dt, a, b, c, d) = (
            ScanCase::cast::<F>(&case.u),
            ScanCase::cast::<F>(&case.delta),
            ScanCase::cast::<F>(&case.a),
            ScanCase::cast::<F>(&case.b),
            ScanCase::cast::<F>(&case.c),
            ScanCase::cast::<F>(&case.d),
        );
        let dims = ScanDims {
            channels: case.channels,
            state: case.state,
            len: case.len,
        };
        let mut y = vec![F::zero(); case.channels * case.len];
        scan_forward(dims, ScanInputs { u: &u, delta: &dt, a: &a, b: &b, c: &c, d: &d }, &mut y);
        let reference = naive_scan((case.channels, case.state, case.len), &u, &dt, &a, &b, &c, &d);
        y.iter()
            .zip(&reference)
            .map(|(p, q)| (*p - *q).abs().to_f64().expect("finite"))
            .fold(0.0, f64::max)
    }
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..instances {
        let case = ScanCase::random(seed, max_len, state);
        worst.0 = worst.0.max(run::<f32>(&case));
        worst.1 = worst.1.max(run::<f64>(&case));
    }
    worst
}

#[derive(Clone, Debug, Default)]
pub struct MetricOutcome {
    /// Largest deviation of dsc, iou, accuracy and hd95 from the references.
    pub max_diff: f64,
    /// hd95 definedness disagreements.
    pub hd95_mismatches: usize,
    /// Largest violation of `dsc = 2 iou / (1 + iou)` and `dsc = F1`.
    pub identity_gap: f64,
    pub fixed_case: Option<f64>,
}

pub fn metric_oracles(instances: u64, side: usize) -> MetricOutcome {
    let mut out = MetricOutcome::default();
    let n = side * side;
    for seed in 0..instances {
        let mut r = rng(10_000 + seed);
        let (p, g) = (random_mask(&mut r, n), random_mask(&mut r, n));
        let (pm, gm) = (BinaryMask::new(side, side, p.clone()), BinaryMask::new(side, side, g.clone()));
        let d = dsc(&pm, &gm);
        let j = iou(&pm, &gm);
        out.max_diff = out.max_diff.max((d - ref_dsc(&p, &g)).abs()).max((j - ref_iou(&p, &g)).abs());
        let labels_p: Vec<u8> = (0..n).map(|_| r.random_range(0..4)).collect();
        let labels_g: Vec<u8> = (0..n).map(|_| r.random_range(0..4)).collect();
        let agree = labels_p.iter().zip(&labels_g).filter(|(a, b)| a == b).count() as f64 / n as f64;
        out.max_diff = out.max_diff.max((accuracy(&labels_p, &labels_g) - agree).abs());
        match (hd95(&pm, &gm, Spacing::default()), ref_hd95(&p, &g, side, side)) {
            (Some(x), Some(y)) => out.max_diff = out.max_diff.max((x - y).abs()),
            (None, None) => {}
            _ => out.hd95_mismatches += 1,
        }
        out.identity_gap = out
            .identity_gap
            .max((d - 2.0 * j / (1.0 + j)).abs())
            .max((d - ref_f1(&p, &g)).abs());
    }
    let a = BinaryMask::from_points(8, 8, &[(0, 0)]);
    let b = BinaryMask::from_points(8, 8, &[(3, 4)]);
    out.fixed_case = hd95(&a, &b, Spacing::default());
    out
}

/// `(check, passed, detail)` rows of the loss suite.
pub fn loss_suite() -> Vec<(&'static str, bool, String)> {
    let mut rows = Vec::new();
    let mut r = rng(4242);
    for (c, name) in [(1usize, "binary"), (4, "multi-class")] {
        let logits = Var::constant(Tensor::randn(&[2, c, 6, 5], 2.0, &mut r));
        let labels: Vec<u8> = (0..60).map(|_| r.random_range(0..c.max(2) as u8)).collect();
        let v = |x: Var| x.value().data()[0];
        let dice = v(dice_loss(&logits, &labels, DICE_SMOOTH).unwrap());
        let bce = v(bce_loss(&logits, &labels).unwrap());
        let a1 = v(combined_loss(&logits, &labels, 1.0).unwrap());
        let a0 = v(combined_loss(&logits, &labels, 0.0).unwrap());
        rows.push((
            if c == 1 { "alpha=1 is dice (binary)" } else { "alpha=1 is dice (multi-class)" },
            (a1 - dice).abs() <= 1e-12,
            format!("{name}: |{a1} - {dice}|"),
        ));
        rows.push((
            if c == 1 { "alpha=0 is bce (binary)" } else { "alpha=0 is bce (multi-class)" },
            (a0 - bce).abs() <= 1e-12,
            format!("{name}: |{a0} - {bce}|"),
        ));
        for magnitude in [20.0, 1000.0] {
            let mut t = Tensor::full(&[2, c, 6, 5], -magnitude);
            for (i, &l) in labels.iter().enumerate() {
                let (b, p) = (i / 30, i % 30);
                if c == 1 {
                    if l == 1 {
                        t.data_mut()[b * 30 + p] = magnitude;
                    }
                } else {
                    t.data_mut()[(b * c + usize::from(l)) * 30 + p] = magnitude;
                }
            }
            let perfect = Var::constant(t);
            let dice = v(dice_loss(&perfect, &labels, DICE_SMOOTH).unwrap());
            let bce = v(bce_loss(&perfect, &labels).unwrap());
            if magnitude == 20.0 {
                rows.push(("perfect prediction bce <= 1e-8 at |logit| 20", bce <= 1e-8, format!("{name}: {bce:e}")));
                rows.push(("perfect prediction dice <= 1e-8 at |logit| 20", dice <= 1e-8, format!("{name}: {dice:e}")));
            } else {
                rows.push(("saturated one-hot prediction dice = 0", dice == 0.0, format!("{name}: {dice:e}")));
            }
        }
    }
    let zero = Var::constant(Tensor::zeros(&[3, 1, 4, 4]));
    let labels: Vec<u8> = (0..48).map(|i| (i % 2) as u8).collect();
    let bce = bce_loss(&zero, &labels).unwrap().value().data()[0];
    rows.push((
        "zero-logit binary bce = ln 2",
        (bce - std::f64::consts::LN_2).abs() <= 1e-9,
        format!("{bce}"),
    ));
    rows
}

/// Named tensors of the full V1 network at 224² as `(name, resolution, channels)`.
pub const V1_224_SHAPES: [(&str, usize, usize); 24] = [
    ("x0", 224, 32),
    ("t0", 56, 64),
    ("t1", 28, 128),
    ("t2", 14, 320),
    ("t3", 7, 512),
    ("r0", 112, 64),
    ("r1", 56, 64),
    ("r2", 28, 128),
    ("r3", 14, 256),
    ("x0_pooled", 112, 32),
    ("x1", 112, 64),
    ("x2", 56, 128),
    ("x3", 28, 256),
    ("x4", 14, 512),
    ("coamamba", 28, 512),
    ("x5", 14, 512),
    ("d4", 28, 512),
    ("dec1", 28, 256),
    ("d3", 56, 256),
    ("dec2", 56, 128),
    ("d2", 112, 128),
    ("dec3", 112, 64),
    ("d1", 224, 64),
    ("d0", 224, 32),
];

/// Mismatches between produced named shapes and the expected `(name, resolution, channels)` rows.
/// Rows absent from `produced` count as mismatches unless `optional` accepts the name.
pub fn shape_mismatches(
    produced: &[(String, Vec<usize>)],
    expected: &[(String, usize, usize)],
    batch: usize,
    optional: impl Fn(&str) -> bool,
) -> Vec<String> {
    let mut out = Vec::new();
    for (name, res, ch) in expected {
        match produced.iter().find(|(n, _)| n == name) {
            Some((_, got)) if got[..] == [batch, *ch, *res, *res] => {}
            Some((_, got)) => out.push(format!("{name}: got {got:?}, want [{batch}, {ch}, {res}, {res}]")),
            None if optional(name) => {}
            None => out.push(format!("{name}: missing")),
        }
    }
    for (name, _) in produced {
        if !expected.iter().any(|(n, _, _)| n == name) {
            out.push(format!("{name}: unexpected tensor"));
        }
    }
    out
}

pub fn expected_rows(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    mambacafu::config::expected_shapes(cfg)
        .expect("valid config")
        .into_iter()
        .map(|(n, s)| (n, s.resolution, s.channels))
        .collect()
}

/// Forward and backward of the tiny V1 network under every ablation variant.
/// Returns `(slug, outcome)`; the outcome describes the first failure.
pub fn variant_smoke(batch: usize) -> Vec<(String, std::result::Result<(), String>)> {
    mambacafu::harness::VARIANTS
        .iter()
        .map(|variant| {
            let outcome = (|| -> std::result::Result<(), String> {
                let mut cfg = ModelConfig::tiny(Variant::V1);
                cfg.ablation = variant.flags;
                let (model, store) = MambaCafu::new(&cfg).map_err(|e| e.to_string())?;
                let size = cfg.input_size;
                let image = Tensor::uniform(&[batch, cfg.in_channels, size, size], 0.0, 1.0, &mut rng(5));
                let mut r = rng(6);
                let labels: Vec<u8> = (0..batch * size * size).map(|_| r.random_range(0..cfg.num_classes as u8)).collect();
                let tape = Tape::new();
                let ctx = Ctx::new(&store, Mode::Train, Some(tape.clone()));
                let out = model.forward_all(&ctx, &Var::constant(image)).map_err(|e| e.to_string())?;
                let shapes = shape_mismatches(&out.named_shapes(), &expected_rows(&cfg), batch, |n| {
                    !cfg.ablation.use_resnet_branch && n.starts_with('r')
                });
                if !shapes.is_empty() {
                    return Err(shapes.join("; "));
                }
                if out.logits.shape() != [batch, cfg.num_classes, size, size] {
                    return Err(format!("logits {:?}", out.logits.shape()));
                }
                let loss = combined_loss(&out.logits, &labels, 0.5).map_err(|e| e.to_string())?;
                let grads = ctx.param_grads(&tape.backward(&loss).map_err(|e| e.to_string())?);
                if !loss.value().is_finite() || grads.is_empty() || grads.iter().any(|(_, g)| !g.is_finite()) {
                    return Err("non-finite loss or gradients".into());
                }
                Ok(())
            })();
            (variant.slug(), outcome)
        })
        .collect()
}
