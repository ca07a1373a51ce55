//! Independent references and helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cafu_tensor::{Tape, Tensor, Var};
use mambacafu::ctx::{Ctx, Mode};
use mambacafu::data::{synth_generate, Split, SynthSpec};
use mambacafu::harness::TrainConfig;
use mambacafu::params::{Builder, ParamId, ParamStore};
use mambacafu::{ModelConfig, Variant};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

pub mod reference;
pub mod suites;

// ---------------------------------------------------------------- scan

/// One random scan problem in row-major `[D, L]`, `[D, S]`, `[S, L]` layout.
#[derive(Clone, Debug)]
pub struct ScanCase {
    pub channels: usize,
    pub state: usize,
    pub len: usize,
    pub u: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl ScanCase {
    pub fn random(seed: u64, max_len: usize, state: usize) -> Self {
        let mut r = rng(seed);
        let channels = r.random_range(1..=6);
        let len = r.random_range(1..=max_len);
        let mut fill = |n: usize, lo: f64, hi: f64| (0..n).map(|_| r.random_range(lo..hi)).collect::<Vec<f64>>();
        Self {
            channels,
            state,
            len,
            u: fill(channels * len, -2.0, 2.0),
            delta: fill(channels * len, 1e-3, 0.5),
            a: fill(channels * state, -4.0, -0.05),
            b: fill(state * len, -1.5, 1.5),
            c: fill(state * len, -1.5, 1.5),
            d: fill(channels, -1.0, 1.0),
        }
    }

    pub fn cast<F: Float>(v: &[f64]) -> Vec<F> {
        v.iter().map(|&x| F::from(x).expect("representable")).collect()
    }
}

/// Direct sequential evaluation of the recurrence, one channel and one state at a time.
pub fn naive_scan<F: Float>(
    (channels, state, len): (usize, usize, usize),
    u: &[F],
    delta: &[F],
    a: &[F],
    b: &[F],
    c: &[F],
    d: &[F],
) -> Vec<F> {
    let mut y = vec![F::zero(); channels * len];
    for ch in 0..channels {
        let mut h = vec![F::zero(); state];
        for t in 0..len {
            let dt = delta[ch * len + t];
            let x = u[ch * len + t];
            let mut out = d[ch] * x;
            for s in 0..state {
                h[s] = (dt * a[ch * state + s]).exp() * h[s] + dt * b[s * len + t] * x;
                out = out + c[s * len + t] * h[s];
            }
            y[ch * len + t] = out;
        }
    }
    y
}

// ---------------------------------------------------------------- metrics

pub fn random_mask(r: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let density: f64 = match r.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => r.random_range(0.05..0.9),
    };
    (0..n).map(|_| r.random_bool(density)).collect()
}

pub fn ref_dsc(a: &[bool], b: &[bool]) -> f64 {
    let tp = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    let (na, nb) = (a.iter().filter(|x| **x).count() as f64, b.iter().filter(|x| **x).count() as f64);
    if na + nb == 0.0 { 1.0 } else { 2.0 * tp / (na + nb) }
}

pub fn ref_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count() as f64;
    if union == 0.0 { 1.0 } else { inter / union }
}

/// Precision/recall F1 with the both-empty case defined as 1.
pub fn ref_f1(pred: &[bool], gt: &[bool]) -> f64 {
    let tp = pred.iter().zip(gt).filter(|(x, y)| **x && **y).count() as f64;
    let np = pred.iter().filter(|x| **x).count() as f64;
    let ng = gt.iter().filter(|x| **x).count() as f64;
    if np == 0.0 && ng == 0.0 {
        return 1.0;
    }
    if tp == 0.0 {
        return 0.0;
    }
    let (p, r) = (tp / np, tp / ng);
    2.0 * p * r / (p + r)
}

fn ref_boundary(m: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let inside = |r: i64, c: i64| r >= 0 && c >= 0 && r < h as i64 && c < w as i64 && m[r as usize * w + c as usize];
    let mut out = Vec::new();
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let interior = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().all(|(dr, dc)| inside(r + dr, c + dc));
            if inside(r, c) && !interior {
                out.push((r as usize, c as usize));
            }
        }
    }
    out
}

/// Brute-force 95th percentile of both directed boundary-to-boundary distance sets.
pub fn ref_hd95(a: &[bool], b: &[bool], h: usize, w: usize) -> Option<f64> {
    let (ea, eb) = (a.iter().all(|x| !x), b.iter().all(|x| !x));
    if ea && eb {
        return Some(0.0);
    }
    if ea || eb {
        return None;
    }
    let (ba, bb) = (ref_boundary(a, h, w), ref_boundary(b, h, w));
    let nearest = |p: (usize, usize), set: &[(usize, usize)]| {
        set.iter()
            .map(|q| ((p.0 as f64 - q.0 as f64).powi(2) + (p.1 as f64 - q.1 as f64).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let mut all: Vec<f64> = ba.iter().map(|&p| nearest(p, &bb)).collect();
    all.extend(bb.iter().map(|&p| nearest(p, &ba)));
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let rank = 0.95 * (all.len() - 1) as f64;
    let (lo, frac) = (rank.floor() as usize, rank.fract());
    let hi = (lo + 1).min(all.len() - 1);
    Some(all[lo] * (1.0 - frac) + all[hi] * frac)
}

// ---------------------------------------------------------------- gradients

pub use cafu_tensor::gradcheck::relative_error;

/// Relative error of a block: norm-wise over every checked entry of its
/// inputs and trainable parameters, plus the worst single tensor.
#[derive(Clone, Debug)]
pub struct BlockGradReport {
    pub block_err: f64,
    pub worst: f64,
    pub worst_name: String,
}

const MAX_ELEMENTS: usize = 24;

fn picks(n: usize, seed: u64) -> Vec<usize> {
    if n <= MAX_ELEMENTS {
        return (0..n).collect();
    }
    let mut r = rng(seed);
    (0..MAX_ELEMENTS).map(|_| r.random_range(0..n)).collect()
}

/// Checks `f(ctx, inputs)` reduced through fixed random weights against
/// central differences in both the inputs and the parameters of `store`.
pub fn check_block(
    store: &mut ParamStore,
    inputs: &[Tensor],
    step: f64,
    seed: u64,
    f: impl Fn(&Ctx, &[Var]) -> mambacafu::Result<Var>,
) -> BlockGradReport {
    let weights = std::cell::RefCell::new(None::<Tensor>);
    let scalar = |ctx: &Ctx, vars: &[Var]| -> Var {
        let y = f(ctx, vars).expect("block forward");
        let mut w = weights.borrow_mut();
        let w = w.get_or_insert_with(|| Tensor::randn(y.shape(), 1.0, &mut rng(seed ^ 0xabc)));
        y.mul(&Var::constant(w.clone())).expect("same shape").sum_all()
    };
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let (input_grads, param_grads) = {
        let ctx = Ctx::new(store, Mode::Train, Some(tape.clone()));
        let out = scalar(&ctx, &leaves);
        let grads = tape.backward(&out).expect("backward");
        let ig: Vec<Tensor> = leaves.iter().map(|l| grads.get_or_zeros(l)).collect();
        let pg: std::collections::HashMap<ParamId, Tensor> = ctx.param_grads(&grads).into_iter().collect();
        (ig, pg)
    };
    let eval = |store: &ParamStore, xs: &[Tensor]| -> f64 {
        let ctx = Ctx::new(store, Mode::Train, None);
        let vars: Vec<Var> = xs.iter().cloned().map(Var::constant).collect();
        scalar(&ctx, &vars).value().data()[0]
    };
    let mut report = BlockGradReport {
        block_err: 0.0,
        worst: 0.0,
        worst_name: String::new(),
    };
    let (mut all_analytic, mut all_numeric) = (Vec::new(), Vec::new());
    let mut note = |name: String, analytic: Vec<f64>, numeric: Vec<f64>| {
        let e = relative_error(&analytic, &numeric);
        all_analytic.extend_from_slice(&analytic);
        all_numeric.extend_from_slice(&numeric);
        if e > report.worst || report.worst_name.is_empty() {
            report.worst = e;
            report.worst_name = name;
        }
    };
    let centre = eval(store, inputs);
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        let idx = picks(inputs[i].numel(), seed + i as u64);
        let analytic: Vec<f64> = idx.iter().map(|&k| input_grads[i].data()[k]).collect();
        let mut numeric = Vec::new();
        for (j, &k) in idx.iter().enumerate() {
            let orig = probe[i].data()[k];
            probe[i].data_mut()[k] = orig + step;
            let plus = eval(store, &probe);
            probe[i].data_mut()[k] = orig - step;
            let minus = eval(store, &probe);
            probe[i].data_mut()[k] = orig;
            numeric.push(difference_quotient(minus, centre, plus, step, analytic[j]));
        }
        note(format!("input{i}"), analytic, numeric);
    }
    for id in store.trainable_ids() {
        let n = store.value(id).numel();
        let idx = picks(n, seed ^ (n as u64) << 8);
        let zeros = Tensor::zeros(store.value(id).shape());
        let g = param_grads.get(&id).unwrap_or(&zeros).clone();
        let analytic: Vec<f64> = idx.iter().map(|&k| g.data()[k]).collect();
        let mut numeric = Vec::new();
        for (j, &k) in idx.iter().enumerate() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + step;
            let plus = eval(store, inputs);
            store.value_mut(id).data_mut()[k] = orig - step;
            let minus = eval(store, inputs);
            store.value_mut(id).data_mut()[k] = orig;
            numeric.push(difference_quotient(minus, centre, plus, step, analytic[j]));
        }
        note(store.name(id).to_string(), analytic, numeric);
    }
    report.block_err = relative_error(&all_analytic, &all_numeric);
    report
}

/// Difference quotient for one scalar given `f(x − h)`, `f(x)` and `f(x + h)`.
/// When the one-sided slopes disagree a ReLU or max kink lies inside the
/// interval and the central quotient mixes two slopes; the one-sided slope
/// closer to `analytic` is then used (the other side contains the kink).
pub fn difference_quotient(minus: f64, centre: f64, plus: f64, step: f64, analytic: f64) -> f64 {
    let central = (plus - minus) / (2.0 * step);
    let (left, right) = ((centre - minus) / step, (plus - centre) / step);
    let kink = (left - right).abs() > 1e-3 * left.abs().max(right.abs()).max(1e-6);
    if !kink {
        return central;
    }
    if (left - analytic).abs() < (right - analytic).abs() {
        left
    } else {
        right
    }
}

/// Builds a block with fresh parameters seeded by `seed`.
pub fn build<T>(seed: u64, f: impl FnOnce(&mut Builder) -> T) -> (T, ParamStore) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let block = f(&mut Builder::new(&mut store, &mut r));
    (block, store)
}

// ---------------------------------------------------------------- training

/// Writes a synthetic dataset and returns its manifest path.
pub fn synth(dir: &Path, count: usize, size: usize, num_classes: usize, seed: u64, split: Split) -> PathBuf {
    synth_generate(dir, SynthSpec { count, size, num_classes, seed, split }).expect("synthetic data");
    dir.join("manifest.tsv")
}

/// Tiny model trained for a fixed number of full-batch-free steps without augmentation.
pub fn short_run(out: &Path, train_manifest: PathBuf, val_manifest: Option<PathBuf>, steps: usize, batch: usize) -> TrainConfig {
    let model = ModelConfig::tiny(Variant::V1);
    let per_epoch = 8usize.div_ceil(batch);
    let epochs = steps.div_ceil(per_epoch);
    TrainConfig {
        model,
        batch_size: batch,
        initial_lr: 3e-3,
        epochs,
        max_steps: Some(steps),
        augment: false,
        restart_epochs: epochs.max(1),
        val_interval: epochs.max(1),
        train_manifest: Some(train_manifest),
        val_manifest,
        out_dir: out.to_path_buf(),
        run_id: Some("run".into()),
        ..TrainConfig::default()
    }
}
