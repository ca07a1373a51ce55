//! State-space components: the scan kernel, the 2-D scan block and MambaConv.

pub mod scan;
pub mod ss2d;

pub use scan::{scan_backward, scan_forward, selective_scan, ScanDims, ScanInputs};
pub use ss2d::{ScanOrder, ScanPath, Ss2dBlock, Ss2dScan};

use cafu_tensor::Var;

use crate::ctx::Ctx;
use crate::nn::{LayerNorm, ResBlock};
use crate::params::Builder;
use crate::Result;

/// `ResB(f + SS2D(LN(f)))` with the residual block mapping to `out_channels`.
#[derive(Clone, Debug)]
pub struct MambaConv {
    pub norm: LayerNorm,
    pub ss2d: Ss2dBlock,
    pub res: ResBlock,
}

impl MambaConv {
    pub fn new(b: &mut Builder, channels: usize, out_channels: usize, expand: usize, state: usize) -> Self {
        Self {
            norm: LayerNorm::new(&mut b.sub("norm"), channels, 1),
            ss2d: Ss2dBlock::new(&mut b.sub("ss2d"), channels, expand, state),
            res: ResBlock::new(&mut b.sub("res"), channels, out_channels),
        }
    }

    pub fn forward(&self, ctx: &Ctx, f: &Var) -> Result<Var> {
        let mixed = self.ss2d.forward(ctx, &self.norm.forward(ctx, f)?)?;
        self.res.forward(ctx, &f.add(&mixed)?)
    }
}

/// Feature mixer of a fusion stage: MambaConv, or a plain double convolution
/// when the state-space path is ablated.
#[derive(Clone, Debug)]
pub enum Mixer {
    Mamba(MambaConv),
    Conv(ResBlock),
}

impl Mixer {
    pub fn new(b: &mut Builder, channels: usize, out_channels: usize, use_mamba: bool, expand: usize, state: usize) -> Self {
        if use_mamba {
            Self::Mamba(MambaConv::new(b, channels, out_channels, expand, state))
        } else {
            Self::Conv(ResBlock::new(b, channels, out_channels))
        }
    }

    pub fn forward(&self, ctx: &Ctx, f: &Var) -> Result<Var> {
        match self {
            Self::Mamba(m) => m.forward(ctx, f),
            Self::Conv(r) => r.forward(ctx, f),
        }
    }
}
