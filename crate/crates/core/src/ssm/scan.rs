//! Selective-scan recurrence:
//!
//! ```text
//! h_t = exp(Δ_t A) ⊙ h_{t-1} + Δ_t B_t u_t,   h_0 = 0
//! y_t = ⟨C_t, h_t⟩ + D u_t
//! ```
//!
//! evaluated independently per channel. Per batch element the layout is
//! `u, Δ: [channels, len]`, `A: [channels, state]`, `B, C: [state, len]`,
//! `D: [channels]`.

use std::sync::Arc;

use cafu_tensor::{Tensor, TensorError, Var};
use num_traits::Float;

/// Sequence positions processed per block by [`scan_forward`].
pub const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub channels: usize,
    pub state: usize,
    pub len: usize,
}

/// Borrowed inputs of one batch element.
#[derive(Clone, Copy, Debug)]
pub struct ScanInputs<'a, F> {
    pub u: &'a [F],
    pub delta: &'a [F],
    pub a: &'a [F],
    pub b: &'a [F],
    pub c: &'a [F],
    pub d: &'a [F],
}

impl<F> ScanInputs<'_, F> {
    fn check(&self, dims: ScanDims) {
        let ScanDims { channels, state, len } = dims;
        assert_eq!(self.u.len(), channels * len, "u extent");
        assert_eq!(self.delta.len(), channels * len, "delta extent");
        assert_eq!(self.a.len(), channels * state, "A extent");
        assert_eq!(self.b.len(), state * len, "B extent");
        assert_eq!(self.c.len(), state * len, "C extent");
        assert_eq!(self.d.len(), channels, "D extent");
    }
}

/// `[state, len]` → `[len, state]`.
fn position_major<F: Copy>(m: &[F], state: usize, len: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(m.len());
    for t in 0..len {
        out.extend((0..state).map(|s| m[s * len + t]));
    }
    out
}

/// Blocked scan: each chunk is first scanned from a zero state while the
/// running decay product is kept, chunk boundary states are then chained, and
/// finally every position receives the carried-in state's contribution.
pub fn scan_forward<F: Float>(dims: ScanDims, x: ScanInputs<F>, y: &mut [F]) {
    x.check(dims);
    let ScanDims { channels, state, len } = dims;
    assert_eq!(y.len(), channels * len, "y extent");
    let chunks = len.div_ceil(CHUNK);
    let bt = position_major(x.b, state, len);
    let ct = position_major(x.c, state, len);
    let mut decay = vec![F::zero(); len * state];
    let mut local = vec![F::zero(); len];
    let mut end_state = vec![F::zero(); chunks * state];
    let mut end_decay = vec![F::zero(); chunks * state];
    let mut carry = vec![F::zero(); state];
    let mut h = vec![F::zero(); state];
    let mut p = vec![F::one(); state];
    for ch in 0..channels {
        let u = &x.u[ch * len..(ch + 1) * len];
        let dt = &x.delta[ch * len..(ch + 1) * len];
        let a = &x.a[ch * state..(ch + 1) * state];
        for k in 0..chunks {
            h.iter_mut().for_each(|v| *v = F::zero());
            p.iter_mut().for_each(|v| *v = F::one());
            for t in k * CHUNK..((k + 1) * CHUNK).min(len) {
                let du = dt[t] * u[t];
                let (b_t, c_t) = (&bt[t * state..(t + 1) * state], &ct[t * state..(t + 1) * state]);
                let decay_t = &mut decay[t * state..(t + 1) * state];
                let mut acc = F::zero();
                for s in 0..state {
                    let at = (dt[t] * a[s]).exp();
                    h[s] = at * h[s] + du * b_t[s];
                    p[s] = p[s] * at;
                    decay_t[s] = p[s];
                    acc = acc + c_t[s] * h[s];
                }
                local[t] = acc;
            }
            end_state[k * state..(k + 1) * state].copy_from_slice(&h);
            end_decay[k * state..(k + 1) * state].copy_from_slice(&p);
        }
        carry.iter_mut().for_each(|v| *v = F::zero());
        let out = &mut y[ch * len..(ch + 1) * len];
        for k in 0..chunks {
            for t in k * CHUNK..((k + 1) * CHUNK).min(len) {
                let mut acc = local[t];
                if k > 0 {
                    let (c_t, decay_t) = (&ct[t * state..(t + 1) * state], &decay[t * state..(t + 1) * state]);
                    for s in 0..state {
                        acc = acc + c_t[s] * decay_t[s] * carry[s];
                    }
                }
                out[t] = acc + x.d[ch] * u[t];
            }
            for s in 0..state {
                carry[s] = end_decay[k * state + s] * carry[s] + end_state[k * state + s];
            }
        }
    }
}

/// Gradients of a scalar loss with respect to every scan input.
#[derive(Clone, Debug)]
pub struct ScanGrads {
    pub u: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

/// Reverse pass for one batch element given the output gradient `gy`. The
/// state trajectory is recomputed rather than stored by the forward pass.
pub fn scan_backward(dims: ScanDims, x: ScanInputs<f64>, gy: &[f64]) -> ScanGrads {
    x.check(dims);
    let ScanDims { channels, state, len } = dims;
    let bt = position_major(x.b, state, len);
    let ct = position_major(x.c, state, len);
    let mut gbt = vec![0.0; state * len];
    let mut gct = vec![0.0; state * len];
    let mut g = ScanGrads {
        u: vec![0.0; channels * len],
        delta: vec![0.0; channels * len],
        a: vec![0.0; channels * state],
        b: Vec::new(),
        c: Vec::new(),
        d: vec![0.0; channels],
    };
    let mut hs = vec![0.0; len * state];
    let mut decays = vec![0.0; len * state];
    let mut gh = vec![0.0; state];
    for ch in 0..channels {
        let u = &x.u[ch * len..(ch + 1) * len];
        let dt = &x.delta[ch * len..(ch + 1) * len];
        let a = &x.a[ch * state..(ch + 1) * state];
        let gyc = &gy[ch * len..(ch + 1) * len];
        let ga = &mut g.a[ch * state..(ch + 1) * state];
        for t in 0..len {
            let du = dt[t] * u[t];
            for s in 0..state {
                let at = (dt[t] * a[s]).exp();
                let prev = if t > 0 { hs[(t - 1) * state + s] } else { 0.0 };
                decays[t * state + s] = at;
                hs[t * state + s] = at * prev + du * bt[t * state + s];
            }
        }
        gh.iter_mut().for_each(|v| *v = 0.0);
        for t in (0..len).rev() {
            let gyt = gyc[t];
            let (dtt, ut) = (dt[t], u[t]);
            let mut g_dt = 0.0;
            let mut g_u = gyt * x.d[ch];
            let row = t * state..(t + 1) * state;
            let (h_t, at_t, b_t, c_t) = (&hs[row.clone()], &decays[row.clone()], &bt[row.clone()], &ct[row.clone()]);
            let (gb_t, gc_t) = (&mut gbt[row.clone()], &mut gct[row]);
            for s in 0..state {
                let at = at_t[s];
                let prev = if t > 0 { hs[(t - 1) * state + s] } else { 0.0 };
                gh[s] += c_t[s] * gyt;
                gc_t[s] += gyt * h_t[s];
                let g_at = gh[s] * prev * at;
                g_dt += g_at * a[s] + gh[s] * b_t[s] * ut;
                ga[s] += g_at * dtt;
                gb_t[s] += gh[s] * dtt * ut;
                g_u += gh[s] * dtt * b_t[s];
                gh[s] *= at;
            }
            g.delta[ch * len + t] = g_dt;
            g.u[ch * len + t] = g_u;
            g.d[ch] += gyt * ut;
        }
    }
    g.b = position_major(&gbt, len, state);
    g.c = position_major(&gct, len, state);
    g
}

fn scan_shapes(u: &Var, delta: &Var, a: &Var, b: &Var, c: &Var, d: &Var) -> Result<(usize, ScanDims), TensorError> {
    let bad = |detail: String| TensorError::Shape { op: "selective_scan", detail };
    let [n, channels, len] = *u.shape() else {
        return Err(bad(format!("u must be [N, D, L], got {:?}", u.shape())));
    };
    let [ac, state] = *a.shape() else {
        return Err(bad(format!("A must be [D, S], got {:?}", a.shape())));
    };
    let ok = delta.shape() == u.shape()
        && ac == channels
        && b.shape() == [n, state, len]
        && c.shape() == [n, state, len]
        && d.shape() == [channels]
        && len > 0;
    if !ok {
        return Err(bad(format!(
            "u {:?}, delta {:?}, A {:?}, B {:?}, C {:?}, D {:?}",
            u.shape(),
            delta.shape(),
            a.shape(),
            b.shape(),
            c.shape(),
            d.shape()
        )));
    }
    Ok((n, ScanDims { channels, state, len }))
}

/// Inputs of batch element `i` within full batched buffers.
fn batch_inputs(vals: &[Arc<Tensor>], dims: ScanDims, i: usize) -> ScanInputs<'_, f64> {
    let per_x = dims.channels * dims.len;
    let per_bc = dims.state * dims.len;
    ScanInputs {
        u: &vals[0].data()[i * per_x..(i + 1) * per_x],
        delta: &vals[1].data()[i * per_x..(i + 1) * per_x],
        a: vals[2].data(),
        b: &vals[3].data()[i * per_bc..(i + 1) * per_bc],
        c: &vals[4].data()[i * per_bc..(i + 1) * per_bc],
        d: vals[5].data(),
    }
}

/// Differentiable batched scan over `u, Δ: [N, D, L]`, `A: [D, S]`,
/// `B, C: [N, S, L]`, `D: [D]`.
pub fn selective_scan(u: &Var, delta: &Var, a: &Var, b: &Var, c: &Var, d: &Var) -> Result<Var, TensorError> {
    let (n, dims) = scan_shapes(u, delta, a, b, c, d)?;
    let vals: Vec<_> = [u, delta, a, b, c, d].iter().map(|v| v.shared_value()).collect();
    let per_x = dims.channels * dims.len;
    let per_bc = dims.state * dims.len;
    let mut y = vec![0.0; n * per_x];
    for i in 0..n {
        scan_forward(dims, batch_inputs(&vals, dims, i), &mut y[i * per_x..(i + 1) * per_x]);
    }
    let value = Tensor::new(u.shape(), y)?;
    Ok(Var::from_op(value, &[u, delta, a, b, c, d], move |gy, needs| {
        let mut gu = vec![0.0; n * per_x];
        let mut gdelta = vec![0.0; n * per_x];
        let mut ga = vec![0.0; dims.channels * dims.state];
        let mut gb = vec![0.0; n * per_bc];
        let mut gc = vec![0.0; n * per_bc];
        let mut gd = vec![0.0; dims.channels];
        for i in 0..n {
            let g = scan_backward(dims, batch_inputs(&vals, dims, i), &gy.data()[i * per_x..(i + 1) * per_x]);
            gu[i * per_x..(i + 1) * per_x].copy_from_slice(&g.u);
            gdelta[i * per_x..(i + 1) * per_x].copy_from_slice(&g.delta);
            gb[i * per_bc..(i + 1) * per_bc].copy_from_slice(&g.b);
            gc[i * per_bc..(i + 1) * per_bc].copy_from_slice(&g.c);
            ga.iter_mut().zip(&g.a).for_each(|(x, y)| *x += y);
            gd.iter_mut().zip(&g.d).for_each(|(x, y)| *x += y);
        }
        let shapes: Vec<Vec<usize>> = vals.iter().map(|v| v.shape().to_vec()).collect();
        [gu, gdelta, ga, gb, gc, gd]
            .into_iter()
            .zip(shapes)
            .zip(needs)
            .map(|((data, shape), &need)| need.then(|| Tensor::new(&shape, data).expect("gradient extent")))
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_closed_form() {
        let dims = ScanDims { channels: 1, state: 2, len: 1 };
        let x = ScanInputs {
            u: &[2.0],
            delta: &[0.5],
            a: &[-1.0, -2.0],
            b: &[0.3, -0.7],
            c: &[1.5, 0.25],
            d: &[0.1],
        };
        let mut y = [0.0];
        scan_forward(dims, x, &mut y);
        let expected = 1.5 * (0.5 * 0.3 * 2.0) + 0.25 * (0.5 * -0.7 * 2.0) + 0.1 * 2.0;
        assert!((y[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn instant_decay_is_memoryless() {
        let dims = ScanDims { channels: 1, state: 1, len: 3 };
        let u = [1.0, -2.0, 0.5];
        let delta = [0.3, 0.2, 0.4];
        let b = [0.7, 1.1, -0.4];
        let c = [0.9, -0.6, 1.3];
        let x = ScanInputs { u: &u, delta: &delta, a: &[-1e6], b: &b, c: &c, d: &[0.2] };
        let mut y = [0.0; 3];
        scan_forward(dims, x, &mut y);
        for t in 0..3 {
            let expected = c[t] * delta[t] * b[t] * u[t] + 0.2 * u[t];
            assert!((y[t] - expected).abs() < 1e-12);
        }
    }
}
