//! Runs the blocked selective scan against a plain sequential recurrence and
//! shows how far the two drift apart in single and double precision.
//!
//! `cargo run --example selective_scan -- [len] [state]`

use mambacafu::ssm::{scan_forward, ScanDims, ScanInputs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sequential(dims: ScanDims, x: ScanInputs<f64>) -> Vec<f64> {
    let ScanDims { channels, state, len } = dims;
    let mut y = vec![0.0; channels * len];
    for d in 0..channels {
        let mut h = vec![0.0; state];
        for t in 0..len {
            let (u, dt) = (x.u[d * len + t], x.delta[d * len + t]);
            let mut acc = x.d[d] * u;
            for s in 0..state {
                h[s] = (dt * x.a[d * state + s]).exp() * h[s] + dt * x.b[s * len + t] * u;
                acc += x.c[s * len + t] * h[s];
            }
            y[d * len + t] = acc;
        }
    }
    y
}

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|s| s.parse().expect("integer")).collect();
    let (len, state, channels) = (args.first().copied().unwrap_or(1024), args.get(1).copied().unwrap_or(16), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut draw = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
    let (u, delta) = (draw(channels * len, -1.0, 1.0), draw(channels * len, 1e-3, 0.1));
    let a: Vec<f64> = draw(channels * state, 0.0, 3.0).iter().map(|v| -v.exp()).collect();
    let (b, c, d) = (draw(state * len, -1.0, 1.0), draw(state * len, -1.0, 1.0), draw(channels, -1.0, 1.0));
    let dims = ScanDims { channels, state, len };
    let inputs = ScanInputs { u: &u, delta: &delta, a: &a, b: &b, c: &c, d: &d };
    let reference = sequential(dims, inputs);

    let mut y64 = vec![0.0; channels * len];
    scan_forward(dims, inputs, &mut y64);
    let cast = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let (u32_, dt32, a32, b32, c32, d32) = (cast(&u), cast(&delta), cast(&a), cast(&b), cast(&c), cast(&d));
    let mut y32 = vec![0f32; channels * len];
    scan_forward(dims, ScanInputs { u: &u32_, delta: &dt32, a: &a32, b: &b32, c: &c32, d: &d32 }, &mut y32);

    let max_diff = |y: &mut dyn Iterator<Item = f64>| y.zip(&reference).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("L = {len}, N = {state}, D = {channels}");
    println!("f64 blocked vs sequential: {:.3e}", max_diff(&mut y64.iter().copied()));
    println!("f32 blocked vs sequential: {:.3e}", max_diff(&mut y32.iter().map(|&v| f64::from(v))));
}
