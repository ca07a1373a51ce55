//! Straight-line nested-loop versions of the layers, read directly from a
//! parameter store. Evaluation-mode normalisation throughout.

use cafu_tensor::Tensor;
use mambacafu::attention::{AttentionGate, ChannelAttention, CoAttentionGate, SpatialAttention};
use mambacafu::nn::{BatchNorm2d, Conv2d, ConvBn, Linear, ResBlock, BN_EPS};
use mambacafu::params::ParamStore;
use rand::Rng;

use super::rng;

/// Replaces every entry with seeded random values so identity-initialised
/// normalisation layers do not hide mistakes. Variances stay in `[0.5, 1.5]`.
pub fn scramble(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let is_var = store.name(id).ends_with("running_var");
        for v in store.value_mut(id).data_mut() {
            *v = if is_var { r.random_range(0.5..1.5) } else { r.random_range(-0.8..0.8) };
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    out.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
    out
}

pub fn conv(store: &ParamStore, layer: &Conv2d, x: &Tensor) -> Tensor {
    let [n, cin, h, w] = x.dims4().unwrap();
    let wt = store.value(layer.weight);
    let (k, s, p, g) = (layer.kernel, layer.spec.stride, layer.spec.padding, layer.spec.groups.max(1));
    let cout = layer.out_channels;
    let (oh, ow) = ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1);
    let (in_per, out_per) = (cin / g, cout / g);
    let mut y = Tensor::zeros(&[n, cout, oh, ow]);
    for b in 0..n {
        for co in 0..cout {
            let group = co / out_per;
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = layer.bias.map_or(0.0, |id| store.value(id).data()[co]);
                    for ci in 0..in_per {
                        for ki in 0..k {
                            for kj in 0..k {
                                let (r, c) = ((i * s + ki) as i64 - p as i64, (j * s + kj) as i64 - p as i64);
                                if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
                                    continue;
                                }
                                acc += wt.get(&[co, ci, ki, kj]) * x.get(&[b, group * in_per + ci, r as usize, c as usize]);
                            }
                        }
                    }
                    y.set(&[b, co, i, j], acc);
                }
            }
        }
    }
    y
}

pub fn batch_norm(store: &ParamStore, bn: &BatchNorm2d, x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.dims4().unwrap();
    let (g, b) = (store.value(bn.gamma).data(), store.value(bn.beta).data());
    let (m, v) = (store.value(bn.running_mean).data(), store.value(bn.running_var).data());
    let mut y = x.clone();
    for i in 0..n {
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    let z = (x.get(&[i, ch, r, col]) - m[ch]) / (v[ch] + BN_EPS).sqrt();
                    y.set(&[i, ch, r, col], g[ch] * z + b[ch]);
                }
            }
        }
    }
    y
}

pub fn conv_bn(store: &ParamStore, layer: &ConvBn, x: &Tensor) -> Tensor {
    batch_norm(store, &layer.bn, &conv(store, &layer.conv, x))
}

pub fn linear(store: &ParamStore, layer: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.value(layer.weight);
    (0..layer.out_features)
        .map(|o| {
            let bias = layer.bias.map_or(0.0, |id| store.value(id).data()[o]);
            bias + (0..layer.in_features).map(|i| w.get(&[o, i]) * x[i]).sum::<f64>()
        })
        .collect()
}

pub fn attention_gate(store: &ParamStore, ag: &AttentionGate, g: &Tensor, x: &Tensor) -> Tensor {
    let s = map(&add(&conv_bn(store, &ag.conv_x, x), &conv_bn(store, &ag.conv_g, g)), |v| v.max(0.0));
    let psi = map(&conv_bn(store, &ag.conv_psi, &s), sigmoid);
    let [n, c, h, w] = x.dims4().unwrap();
    let mut y = x.clone();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    y.set(&[b, ch, i, j], x.get(&[b, ch, i, j]) * psi.get(&[b, 0, i, j]));
                }
            }
        }
    }
    y
}

pub fn spatial_attention(store: &ParamStore, sa: &SpatialAttention, f: &Tensor) -> Tensor {
    let [n, c, h, w] = f.dims4().unwrap();
    let mut pooled = Tensor::zeros(&[n, 2, h, w]);
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let vals: Vec<f64> = (0..c).map(|ch| f.get(&[b, ch, i, j])).collect();
                pooled.set(&[b, 0, i, j], vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                pooled.set(&[b, 1, i, j], vals.iter().sum::<f64>() / c as f64);
            }
        }
    }
    let gate = map(&conv(store, &sa.conv, &pooled), sigmoid);
    let mut y = f.clone();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    y.set(&[b, ch, i, j], f.get(&[b, ch, i, j]) * gate.get(&[b, 0, i, j]));
                }
            }
        }
    }
    y
}

pub fn channel_attention(store: &ParamStore, ca: &ChannelAttention, f: &Tensor) -> Tensor {
    let [n, c, h, w] = f.dims4().unwrap();
    let mut y = f.clone();
    for b in 0..n {
        let squeezed: Vec<f64> = (0..c)
            .map(|ch| {
                let mut s = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        s += f.get(&[b, ch, i, j]);
                    }
                }
                s / (h * w) as f64
            })
            .collect();
        let hidden: Vec<f64> = linear(store, &ca.fc1, &squeezed).into_iter().map(|v| v.max(0.0)).collect();
        let gate: Vec<f64> = linear(store, &ca.fc2, &hidden).into_iter().map(sigmoid).collect();
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    y.set(&[b, ch, i, j], f.get(&[b, ch, i, j]) * gate[ch]);
                }
            }
        }
    }
    y
}

pub fn max_pool(x: &Tensor, k: usize) -> Tensor {
    let [n, c, h, w] = x.dims4().unwrap();
    let mut y = Tensor::zeros(&[n, c, h / k, w / k]);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h / k {
                for j in 0..w / k {
                    let mut m = f64::NEG_INFINITY;
                    for di in 0..k {
                        for dj in 0..k {
                            m = m.max(x.get(&[b, ch, i * k + di, j * k + dj]));
                        }
                    }
                    y.set(&[b, ch, i, j], m);
                }
            }
        }
    }
    y
}

/// Half-pixel bilinear resampling with edge clamping.
pub fn bilinear(x: &Tensor, out: usize) -> Tensor {
    let [n, c, h, w] = x.dims4().unwrap();
    let src = |o: usize, len: usize| {
        let pos = ((o as f64 + 0.5) * len as f64 / out as f64 - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = pos.floor() as usize;
        (lo, (lo + 1).min(len - 1), pos - lo as f64)
    };
    let mut y = Tensor::zeros(&[n, c, out, out]);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..out {
                let (y0, y1, fy) = src(i, h);
                for j in 0..out {
                    let (x0, x1, fx) = src(j, w);
                    let v = x.get(&[b, ch, y0, x0]) * (1.0 - fy) * (1.0 - fx)
                        + x.get(&[b, ch, y0, x1]) * (1.0 - fy) * fx
                        + x.get(&[b, ch, y1, x0]) * fy * (1.0 - fx)
                        + x.get(&[b, ch, y1, x1]) * fy * fx;
                    y.set(&[b, ch, i, j], v);
                }
            }
        }
    }
    y
}

pub fn align(x: &Tensor, target: usize) -> Tensor {
    let h = x.shape()[2];
    if h > target {
        max_pool(x, h / target)
    } else if h < target {
        bilinear(x, target)
    } else {
        x.clone()
    }
}

pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
    let [n, _, h, w] = parts[0].dims4().unwrap();
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut y = Tensor::zeros(&[n, total, h, w]);
    for b in 0..n {
        let mut offset = 0;
        for p in parts {
            for ch in 0..p.shape()[1] {
                for i in 0..h {
                    for j in 0..w {
                        y.set(&[b, offset + ch, i, j], p.get(&[b, ch, i, j]));
                    }
                }
            }
            offset += p.shape()[1];
        }
    }
    y
}

pub fn co_attention_gate(store: &ParamStore, gate: &CoAttentionGate, a: &Tensor, b: &Tensor) -> Tensor {
    let (a, b) = (align(a, gate.align.target), align(b, gate.align.target));
    let fused = match &gate.gates {
        Some((ag1, ag2)) => concat_channels(&[&attention_gate(store, ag1, &a, &b), &attention_gate(store, ag2, &b, &a)]),
        None => concat_channels(&[&b, &a]),
    };
    let fused = match &gate.channel_attention {
        Some(ca) => channel_attention(store, ca, &fused),
        None => fused,
    };
    match &gate.projection {
        Some(p) => conv(store, p, &fused),
        None => fused,
    }
}

pub fn res_block(store: &ParamStore, block: &ResBlock, x: &Tensor) -> Tensor {
    let h = map(&conv_bn(store, &block.first, x), |v| v.max(0.0));
    let h = map(&conv_bn(store, &block.second, &h), |v| v.max(0.0));
    let skip = match &block.skip {
        Some(p) => conv_bn(store, p, x),
        None => x.clone(),
    };
    add(&h, &skip)
}
