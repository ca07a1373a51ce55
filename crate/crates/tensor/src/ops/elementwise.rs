use crate::tensor::numel_of;
use crate::{strides_of, Result, Tensor, TensorError, Var};

/// Numpy-style broadcast of two shapes, aligned on trailing axes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (zero on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every output position with the matching flat offsets into `a` and `b`.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel_of(out);
    if total == 0 {
        return;
    }
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let mut k = 0;
    loop {
        let base_a: usize = idx.iter().zip(sa).map(|(i, s)| i * s).sum();
        let base_b: usize = idx.iter().zip(sb).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            f(k, base_a + j * ia, base_b + j * ib);
            k += 1;
        }
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < out[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Sums `grad` (shaped like the broadcast output) back down to `shape`.
pub(crate) fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out = grad.shape();
    let st = broadcast_strides(shape, out);
    let zero = vec![0; out.len()];
    let mut acc = vec![0.0; numel_of(shape)];
    let g = grad.data();
    for_each_broadcast(out, &st, &zero, |k, off, _| acc[off] += g[k]);
    Tensor::from_parts(shape.to_vec(), acc)
}

/// Expands `t` to `shape` by repeating along broadcast axes.
pub(crate) fn broadcast_to(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let st = broadcast_strides(t.shape(), shape);
    let zero = vec![0; shape.len()];
    let mut data = vec![0.0; numel_of(shape)];
    let src = t.data();
    for_each_broadcast(shape, &st, &zero, |k, off, _| data[k] = src[off]);
    Tensor::from_parts(shape.to_vec(), data)
}

fn broadcast_apply(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| TensorError::mismatch(op, a.shape(), b.shape()))?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![0.0; numel_of(&out)];
    let (da, db) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |k, ia, ib| data[k] = f(da[ia], db[ib]));
    Ok(Tensor::from_parts(out, data))
}

impl Var {
    pub fn add(&self, other: &Var) -> Result<Var> {
        let value = broadcast_apply("add", self.value(), other.value(), |x, y| x + y)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(Var::from_op(value, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| reduce_to(g, &sa)),
                needs[1].then(|| reduce_to(g, &sb)),
            ]
        }))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let value = broadcast_apply("sub", self.value(), other.value(), |x, y| x - y)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(Var::from_op(value, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| reduce_to(g, &sa)),
                needs[1].then(|| reduce_to(&g.map(|v| -v), &sb)),
            ]
        }))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        let value = broadcast_apply("mul", self.value(), other.value(), |x, y| x * y)?;
        let (a, b) = (self.shared_value(), other.shared_value());
        Ok(Var::from_op(value, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| {
                let full = broadcast_apply("mul", g, &b, |x, y| x * y).expect("forward shapes");
                reduce_to(&full, a.shape())
            });
            let gb = needs[1].then(|| {
                let full = broadcast_apply("mul", g, &a, |x, y| x * y).expect("forward shapes");
                reduce_to(&full, b.shape())
            });
            vec![ga, gb]
        }))
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        let value = broadcast_apply("div", self.value(), other.value(), |x, y| x / y)?;
        let (a, b) = (self.shared_value(), other.shared_value());
        Ok(Var::from_op(value, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| {
                let full = broadcast_apply("div", g, &b, |x, y| x / y).expect("forward shapes");
                reduce_to(&full, a.shape())
            });
            let gb = needs[1].then(|| {
                // d(a/b)/db = -a / b^2
                let ab = broadcast_apply("div", &a, &b, |x, y| x / y).expect("forward shapes");
                let q = broadcast_apply("div", &ab, &b, |x, y| -x / y).expect("forward shapes");
                let full = broadcast_apply("mul", g, &q, |x, y| x * y).expect("forward shapes");
                reduce_to(&full, b.shape())
            });
            vec![ga, gb]
        }))
    }

    /// Elementwise map with derivative expressed through input `x` and output `y`.
    fn unary(&self, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
        let value = self.value().map(f);
        let x = self.shared_value();
        let y = std::sync::Arc::new(value.clone());
        Var::from_op(value, &[self], move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data().iter().zip(y.data()))
                .map(|(&gv, (&xv, &yv))| gv * df(xv, yv))
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        })
    }

    pub fn relu(&self) -> Var {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn silu(&self) -> Var {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Var {
        self.unary(
            |x| 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
            |x, _| {
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            },
        )
    }

    pub fn softplus(&self) -> Var {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn exp(&self) -> Var {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn square(&self) -> Var {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, factor: f64) -> Var {
        let value = self.value().map(|x| x * factor);
        Var::from_op(value, &[self], move |g, _| vec![Some(g.map(|v| v * factor))])
    }

    pub fn add_scalar(&self, offset: f64) -> Var {
        let value = self.value().map(|x| x + offset);
        Var::from_op(value, &[self], |g, _| vec![Some(g.clone())])
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
