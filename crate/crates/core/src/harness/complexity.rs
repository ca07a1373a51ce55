//! Parameter counts by traversal and multiply-accumulate counts by per-op formulas.
//!
//! MAC conventions: convolution `Cout·(Cin/g)·k²·Ho·Wo`, linear `rows·in·out`,
//! batch and layer normalisation two per element, attention `2·N·Nk·C`, scan
//! `3·D·S·L`. Biases, activations, pooling and resampling are not counted.

use std::collections::BTreeMap;

use crate::attention::gate_width;
use crate::config::ModelConfig;
use crate::model::MambaCafu;
use crate::ssm::ss2d::dt_rank;
use crate::Result;

/// Cost of one top-level block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockCost {
    pub name: String,
    pub parameters: usize,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Complexity {
    pub parameters: usize,
    pub macs: u64,
    pub blocks: Vec<BlockCost>,
}

impl Complexity {
    pub fn gmac(&self) -> f64 {
        self.macs as f64 / 1e9
    }

    pub fn mparams(&self) -> f64 {
        self.parameters as f64 / 1e6
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<14} {:>14} {:>12}\n", "block", "parameters", "GMac");
        for b in &self.blocks {
            out.push_str(&format!("{:<14} {:>14} {:>12.4}\n", b.name, b.parameters, b.macs as f64 / 1e9));
        }
        out.push_str(&format!("{:<14} {:>14} {:>12.4}\n", "total", self.parameters, self.gmac()));
        out
    }
}

/// Top-level block of a parameter name, matching the MAC attribution labels.
pub fn block_of(param_name: &str) -> &str {
    let mut parts = param_name.split('.');
    match (parts.next(), parts.next()) {
        (Some("encoder" | "decoder"), Some(block)) => block,
        (Some(first), _) => first,
        _ => param_name,
    }
}

/// Trainable parameters per block by walking the built parameter store.
pub fn parameters_by_block(cfg: &ModelConfig) -> Result<BTreeMap<String, usize>> {
    let (_, store) = MambaCafu::new(cfg)?;
    let mut out = BTreeMap::new();
    for (name, t, trainable) in store.iter() {
        if trainable {
            *out.entry(block_of(name).to_string()).or_default() += t.numel();
        }
    }
    Ok(out)
}

/// Analytic MAC count of one batch-1 forward pass, per block.
pub fn macs_by_block(cfg: &ModelConfig) -> BTreeMap<String, u64> {
    Counter::new(cfg).run()
}

pub fn count_params_flops(cfg: &ModelConfig) -> Result<Complexity> {
    let params = parameters_by_block(cfg)?;
    let macs = macs_by_block(cfg);
    let names: std::collections::BTreeSet<&String> = params.keys().chain(macs.keys()).collect();
    let blocks: Vec<BlockCost> = names
        .into_iter()
        .map(|n| BlockCost {
            name: n.clone(),
            parameters: params.get(n).copied().unwrap_or(0),
            macs: macs.get(n).copied().unwrap_or(0),
        })
        .collect();
    Ok(Complexity {
        parameters: blocks.iter().map(|b| b.parameters).sum(),
        macs: blocks.iter().map(|b| b.macs).sum(),
        blocks,
    })
}

#[derive(Clone, Copy)]
enum Fusion {
    Gated { ca: bool },
    Project,
    Concat,
}

struct Counter<'a> {
    cfg: &'a ModelConfig,
    out: BTreeMap<String, u64>,
}

fn conv(cin: usize, cout: usize, k: usize, groups: usize, res: usize) -> u64 {
    (cout * (cin / groups) * k * k * res * res) as u64
}

fn norm(c: usize, positions: usize) -> u64 {
    (2 * c * positions) as u64
}

fn conv_bn(cin: usize, cout: usize, k: usize, res: usize) -> u64 {
    conv(cin, cout, k, 1, res) + norm(cout, res * res)
}

fn res_block(cin: usize, cout: usize, res: usize) -> u64 {
    let skip = if cin != cout { conv_bn(cin, cout, 1, res) } else { 0 };
    conv_bn(cin, cout, 3, res) + conv_bn(cout, cout, 3, res) + skip
}

fn attention_gate(f_g: usize, f_x: usize, f_int: usize, res: usize) -> u64 {
    conv_bn(f_x, f_int, 1, res) + conv_bn(f_g, f_int, 1, res) + conv_bn(f_int, 1, 1, res)
}

impl<'a> Counter<'a> {
    fn new(cfg: &'a ModelConfig) -> Self {
        Self {
            cfg,
            out: BTreeMap::new(),
        }
    }

    fn add(&mut self, block: &str, macs: u64) {
        *self.out.entry(block.to_string()).or_default() += macs;
    }

    fn fusion(&self, mode: Fusion, a: usize, b: usize, f_int: usize, res: usize) -> u64 {
        let w = a + b;
        match mode {
            Fusion::Gated { ca } => {
                let se = if ca {
                    let hidden = w / self.cfg.ca_reduction;
                    (2 * w * hidden) as u64
                } else {
                    0
                };
                attention_gate(a, b, f_int, res) + attention_gate(b, a, f_int, res) + se
            }
            Fusion::Project => conv(w, w, 1, 1, res),
            Fusion::Concat => 0,
        }
    }

    fn ss2d(&self, c: usize, res: usize) -> u64 {
        let n = res * res;
        let d = self.cfg.ssm_expand * c;
        let s = self.cfg.ssm_state_dim;
        let r = dt_rank(d);
        let path = conv(d, r + 2 * s, 1, 1, res) + conv(r, d, 1, 1, res) + (3 * d * s * n) as u64;
        conv(c, 2 * d, 1, 1, res) + conv(d, d, 3, d, res) + 4 * path + norm(d, n) + conv(d, c, 1, 1, res)
    }

    fn mixer(&self, mamba: bool, w: usize, out: usize, res: usize) -> u64 {
        if mamba {
            norm(w, res * res) + self.ss2d(w, res) + res_block(w, out, res)
        } else {
            res_block(w, out, res)
        }
    }

    fn fusion_mode(&self, enabled: bool, ca: bool) -> Fusion {
        match (enabled, self.cfg.ablation.use_coag) {
            (true, true) => Fusion::Gated { ca },
            (true, false) => Fusion::Project,
            (false, _) => Fusion::Concat,
        }
    }

    fn transformer(&mut self) {
        let layout = self.cfg.backbones();
        let mut cin = self.cfg.in_channels;
        let mut res = self.cfg.input_size / 4;
        for i in 0..4 {
            let d = layout.vit_dims[i];
            let n = res * res;
            let k = if i == 0 { 7 } else { 3 };
            let mut m = conv(cin, d, k, 1, res) + norm(d, n);
            for _ in 0..layout.vit_depths[i] {
                let sr = layout.vit_sr_ratios[i];
                let (reduce, nk) = if layout.vit_linear {
                    let p = layout.vit_pool;
                    (conv(d, d, 1, 1, p) + norm(d, p * p), p * p)
                } else if sr > 1 {
                    let r2 = res / sr;
                    (conv(d, d, sr, 1, r2) + norm(d, r2 * r2), r2 * r2)
                } else {
                    (0, n)
                };
                let hidden = d * layout.vit_mlp_ratios[i];
                m += norm(d, n)
                    + (d * d * n) as u64
                    + reduce
                    + (d * 2 * d * nk) as u64
                    + (2 * n * nk * d) as u64
                    + (d * d * n) as u64
                    + norm(d, n)
                    + (d * hidden * n) as u64
                    + conv(hidden, hidden, 3, hidden, res)
                    + (hidden * d * n) as u64;
            }
            m += norm(d, n);
            self.add("transformer", m);
            cin = d;
            res /= 2;
        }
    }

    fn cnn(&mut self) {
        let layout = self.cfg.backbones();
        let ch = layout.cnn_channels;
        let s = self.cfg.input_size;
        let mut m = conv_bn(self.cfg.in_channels, ch[0], 7, s / 2);
        for (layer, res) in [(1, s / 4), (2, s / 8), (3, s / 16)] {
            let (cin, cout) = (ch[layer - 1], ch[layer]);
            for k in 0..layout.cnn_blocks {
                let ci = if k == 0 { cin } else { cout };
                m += conv_bn(ci, cout, 3, res) + conv_bn(cout, cout, 3, res);
                if ci != cout || (k == 0 && layer > 1) {
                    m += conv_bn(ci, cout, 1, res);
                }
            }
        }
        self.add("cnn", m);
    }

    fn run(mut self) -> BTreeMap<String, u64> {
        let cfg = self.cfg;
        let flags = cfg.ablation;
        let s = cfg.input_size;
        let x = cfg.main_channels();
        let t = cfg.backbones().vit_dims;
        let r = cfg.backbones().cnn_channels;
        self.transformer();
        if flags.use_resnet_branch {
            self.cnn();
        }
        self.add("stem", res_block(cfg.in_channels, x[0], s));
        for i in 0..4 {
            let res = s >> (i + 1);
            let out = x[i + 1];
            let f_int = gate_width(out);
            let enabled = flags.use_coasmamba;
            let mut w = x[i] + t[i];
            let mut m = self.fusion(self.fusion_mode(enabled, true), x[i], t[i], f_int, res);
            if flags.use_resnet_branch {
                if enabled {
                    m += conv(2, 1, 7, 1, res) + attention_gate(r[i], w, f_int, res);
                } else {
                    w += r[i];
                }
            }
            m += self.mixer(enabled && flags.use_mambaconv, w, out, res);
            self.add(&format!("coasmamba{}", i + 1), m);
        }
        let res = s / 8;
        let m = self.fusion(self.fusion_mode(flags.use_coamamba, true), x[3], x[4], gate_width(x[5]), res)
            + self.mixer(flags.use_coamamba && flags.use_mambaconv, x[3] + x[4], x[5], res);
        self.add("coamamba", m);
        let mut stream = x[5];
        for j in 0..4 {
            let lo = 3 - j;
            let res = s >> lo;
            let f_int = gate_width(x[lo]);
            let mode = self.fusion_mode(flags.use_doublelcoa, false);
            let skip_w = x[lo] + x[lo + 1];
            let m = self.fusion(mode, x[lo], x[lo + 1], f_int, res)
                + self.fusion(mode, stream, skip_w, f_int, res)
                + res_block(stream + skip_w, x[lo], res);
            self.add(&format!("doublelcoa{}", j + 1), m);
            stream = x[lo];
        }
        self.add("head", conv(x[0], cfg.num_classes, 1, 1, s));
        self.out
    }
}
