//! Four-direction 2-D selective scan.

use cafu_tensor::ops::Conv2dSpec;
use cafu_tensor::{Tensor, Var};

use super::scan::selective_scan;
use crate::ctx::Ctx;
use crate::error::At;
use crate::nn::{Conv2d, LayerNorm};
use crate::params::{Builder, ParamId};
use crate::{Error, Result};

/// Traversal of an `H × W` grid as a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanOrder {
    /// Rows top to bottom, each left to right.
    RowLr,
    /// Rows top to bottom, each right to left.
    RowRl,
    /// Columns left to right, each top to bottom.
    ColTb,
    /// Columns left to right, each bottom to top.
    ColBt,
}

impl ScanOrder {
    pub const ALL: [ScanOrder; 4] = [Self::RowLr, Self::RowRl, Self::ColTb, Self::ColBt];

    pub fn name(self) -> &'static str {
        match self {
            Self::RowLr => "row_lr",
            Self::RowRl => "row_rl",
            Self::ColTb => "col_tb",
            Self::ColBt => "col_bt",
        }
    }

    /// Sequence position of pixel `(row, col)`.
    pub fn position(self, row: usize, col: usize, height: usize, width: usize) -> usize {
        match self {
            Self::RowLr => row * width + col,
            Self::RowRl => row * width + (width - 1 - col),
            Self::ColTb => col * height + row,
            Self::ColBt => col * height + (height - 1 - row),
        }
    }

    /// `[N, C, H, W]` → `[N, C, H·W]` in this order.
    pub fn flatten(self, x: &Var) -> Result<Var> {
        let [n, c, h, w] = x.dims4()?;
        let v = match self {
            Self::RowLr => x.clone(),
            Self::RowRl => x.flip(3)?,
            Self::ColTb => x.permute(&[0, 1, 3, 2])?,
            Self::ColBt => x.flip(2)?.permute(&[0, 1, 3, 2])?,
        };
        Ok(v.reshape(&[n, c, h * w])?)
    }

    /// Inverse of [`Self::flatten`].
    pub fn unflatten(self, seq: &Var, height: usize, width: usize) -> Result<Var> {
        let [n, c, _] = *seq.shape() else {
            return Err(cafu_tensor::TensorError::Rank {
                op: "unflatten",
                expected: 3,
                got: seq.shape().to_vec(),
            }
            .into());
        };
        Ok(match self {
            Self::RowLr => seq.reshape(&[n, c, height, width])?,
            Self::RowRl => seq.reshape(&[n, c, height, width])?.flip(3)?,
            Self::ColTb => seq.reshape(&[n, c, width, height])?.permute(&[0, 1, 3, 2])?,
            Self::ColBt => seq
                .reshape(&[n, c, width, height])?
                .permute(&[0, 1, 3, 2])?
                .flip(2)?,
        })
    }
}

/// Input-dependent scan parameters of one traversal.
#[derive(Clone, Debug)]
pub struct ScanPath {
    pub order: ScanOrder,
    /// Projects each position to `[Δ rank | B | C]`.
    pub x_proj: Conv2d,
    pub dt_proj: Conv2d,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub channels: usize,
    pub state: usize,
    pub dt_rank: usize,
}

/// Step-size rank used for a scan over `channels` features.
pub fn dt_rank(channels: usize) -> usize {
    channels.div_ceil(16)
}

impl ScanPath {
    pub fn new(b: &mut Builder, order: ScanOrder, channels: usize, state: usize) -> Self {
        let rank = dt_rank(channels);
        let x_proj = Conv2d::pointwise(&mut b.sub("x_proj"), channels, rank + 2 * state, false);
        let dt_proj = {
            let mut sb = b.sub("dt_proj");
            let bound = (rank as f64).powf(-0.5);
            let weight = sb.uniform("weight", &[channels, rank, 1, 1], bound);
            // Step sizes start log-uniform in [1e-3, 1e-1]; the bias stores their inverse softplus.
            let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
            let bias_values: Vec<f64> = (0..channels)
                .map(|_| {
                    let dt = (lo + (hi - lo) * sb.sample()).exp().max(1e-4);
                    dt + (-(-dt).exp_m1()).ln()
                })
                .collect();
            let bias = sb.param("bias", Tensor::new(&[channels], bias_values).expect("extent"));
            Conv2d {
                weight,
                bias: Some(bias),
                in_channels: rank,
                out_channels: channels,
                kernel: 1,
                spec: Conv2dSpec::default(),
            }
        };
        let a_init: Vec<f64> = (0..channels)
            .flat_map(|_| (1..=state).map(|s| (s as f64).ln()))
            .collect();
        Self {
            order,
            x_proj,
            dt_proj,
            a_log: b.param("a_log", Tensor::new(&[channels, state], a_init).expect("extent")),
            d_skip: b.constant("d", &[channels], 1.0),
            channels,
            state,
            dt_rank: rank,
        }
    }

    /// Scans `seq: [N, D, L]`, returning `[N, D, L]`.
    pub fn forward(&self, ctx: &Ctx, seq: &Var) -> Result<Var> {
        let [n, d, l] = *seq.shape() else {
            unreachable!("flatten yields rank-3 sequences")
        };
        let store = ctx.store();
        if !store.value(self.a_log).is_finite() || !store.value(self.d_skip).is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite state-space parameters in {}",
                store.name(self.a_log)
            )));
        }
        let (r, s) = (self.dt_rank, self.state);
        let proj = self.x_proj.forward(ctx, &seq.reshape(&[n, d, l, 1])?)?;
        let dt = proj.narrow(1, 0, r)?;
        let b = proj.narrow(1, r, s)?.reshape(&[n, s, l])?;
        let c = proj.narrow(1, r + s, s)?.reshape(&[n, s, l])?;
        let delta = self.dt_proj.forward(ctx, &dt)?.softplus().reshape(&[n, d, l])?;
        let a = ctx.param(self.a_log).exp().neg();
        let y = selective_scan(seq, &delta, &a, &b, &c, &ctx.param(self.d_skip))
            .at(|| format!("scan {}", self.order.name()))?;
        ctx.add_macs((3 * n * d * s * l) as u64);
        Ok(y)
    }
}

/// The four traversals whose outputs are summed (fixed order).
#[derive(Clone, Debug)]
pub struct Ss2dScan {
    pub paths: Vec<ScanPath>,
}

impl Ss2dScan {
    pub fn new(b: &mut Builder, channels: usize, state: usize) -> Self {
        Self {
            paths: ScanOrder::ALL
                .iter()
                .map(|&o| ScanPath::new(&mut b.sub(o.name()), o, channels, state))
                .collect(),
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        let [_, _, h, w] = x.dims4()?;
        let mut total: Option<Var> = None;
        for path in &self.paths {
            let y = path.forward(ctx, &path.order.flatten(x)?)?;
            let y = path.order.unflatten(&y, h, w)?;
            total = Some(match total {
                Some(t) => t.add(&y)?,
                None => y,
            });
        }
        Ok(total.expect("four paths"))
    }
}

/// Gated state-space block: input projection, depthwise convolution, the
/// four-way scan, output normalisation, SiLU gate and output projection.
#[derive(Clone, Debug)]
pub struct Ss2dBlock {
    pub in_proj: Conv2d,
    pub dw_conv: Conv2d,
    pub scan: Ss2dScan,
    pub out_norm: LayerNorm,
    pub out_proj: Conv2d,
    pub inner: usize,
}

impl Ss2dBlock {
    pub fn new(b: &mut Builder, channels: usize, expand: usize, state: usize) -> Self {
        let inner = channels * expand;
        Self {
            in_proj: Conv2d::pointwise(&mut b.sub("in_proj"), channels, 2 * inner, false),
            dw_conv: Conv2d::new(&mut b.sub("dw_conv"), inner, inner, 3, Conv2dSpec::new(1, 1).grouped(inner), true),
            scan: Ss2dScan::new(&mut b.sub("scan"), inner, state),
            out_norm: LayerNorm::new(&mut b.sub("out_norm"), inner, 1),
            out_proj: Conv2d::pointwise(&mut b.sub("out_proj"), inner, channels, false),
            inner,
        }
    }

    pub fn forward(&self, ctx: &Ctx, f: &Var) -> Result<Var> {
        let xz = self.in_proj.forward(ctx, f)?;
        let x = xz.narrow(1, 0, self.inner)?;
        let z = xz.narrow(1, self.inner, self.inner)?;
        let x = self.dw_conv.forward(ctx, &x)?.silu();
        let y = self.scan.forward(ctx, &x)?;
        let y = self.out_norm.forward(ctx, &y)?.mul(&z.silu())?;
        self.out_proj.forward(ctx, &y)
    }
}
