use crate::{Result, Tensor, TensorError, Var};

/// Row/column strides of a stored `rows × cols` matrix, optionally read transposed.
#[derive(Clone, Copy)]
struct View {
    rs: isize,
    cs: isize,
}

impl View {
    fn of(cols: usize, transposed: bool) -> Self {
        if transposed {
            Self { rs: 1, cs: cols as isize }
        } else {
            Self { rs: cols as isize, cs: 1 }
        }
    }
}

/// `c = beta * c + a · b` with `a: m×k`, `b: k×n` read through arbitrary strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    av: (isize, isize),
    b: &[f64],
    bv: (isize, isize),
    beta: f64,
    c: &mut [f64],
    cv: (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: callers pass slices whose extents cover every strided access for
    // the given dimensions; the matrices do not alias.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            av.0,
            av.1,
            b.as_ptr(),
            bv.0,
            bv.1,
            beta,
            c.as_mut_ptr(),
            cv.0,
            cv.1,
        );
    }
}

impl Var {
    /// Batched product `op(a) · op(b)` where `op` optionally transposes the
    /// trailing two axes.
    ///
    /// `self` is `[batch, r, c]` or `[r, c]`; `other` is `[batch, r, c]` or a
    /// rank-2 matrix shared by every batch entry.
    pub fn matmul_t(&self, other: &Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (ba, ra, ca) = mat_dims(self.shape())?;
        let (bb, rb, cb) = mat_dims(other.shape())?;
        let (m, k) = if trans_a { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if trans_b { (cb, rb) } else { (rb, cb) };
        let shared_b = other.shape().len() == 2;
        if k != k2 || (!shared_b && ba != bb) || (self.shape().len() == 2 && !shared_b) {
            return Err(TensorError::mismatch("matmul", self.shape(), other.shape()));
        }
        let batch = ba;
        let va = View::of(ca, trans_a);
        let vb = View::of(cb, trans_b);
        let a = self.shared_value();
        let b = other.shared_value();
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            let boff = if shared_b { 0 } else { i * k * n };
            gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..],
                (va.rs, va.cs),
                &b.data()[boff..],
                (vb.rs, vb.cs),
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
                (n as isize, 1),
            );
        }
        let out_shape = if self.shape().len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let value = Tensor::from_parts(out_shape, out);
        Ok(Var::from_op(value, &[self, other], move |g, needs| {
            let g = g.data();
            let ga = needs[0].then(|| {
                // d op(a) = g · op(b)^T, written through op(a)'s strides.
                let mut da = vec![0.0; a.numel()];
                for i in 0..batch {
                    let boff = if shared_b { 0 } else { i * k * n };
                    gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..],
                        (n as isize, 1),
                        &b.data()[boff..],
                        (vb.cs, vb.rs),
                        0.0,
                        &mut da[i * m * k..(i + 1) * m * k],
                        (va.rs, va.cs),
                    );
                }
                Tensor::from_parts(a.shape().to_vec(), da)
            });
            let gb = needs[1].then(|| {
                // d op(b) = op(a)^T · g
                let mut db = vec![0.0; b.numel()];
                for i in 0..batch {
                    let (boff, beta) = if shared_b { (0, 1.0) } else { (i * k * n, 0.0) };
                    gemm(
                        k,
                        m,
                        n,
                        &a.data()[i * m * k..],
                        (va.cs, va.rs),
                        &g[i * m * n..],
                        (n as isize, 1),
                        beta,
                        &mut db[boff..boff + k * n],
                        (vb.rs, vb.cs),
                    );
                }
                Tensor::from_parts(b.shape().to_vec(), db)
            });
            vec![ga, gb]
        }))
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.matmul_t(other, false, false)
    }

    /// Affine map over the last axis: `x · weightᵀ + bias`, weight `[out, in]`.
    pub fn linear(&self, weight: &Var, bias: Option<&Var>) -> Result<Var> {
        let shape = self.shape().to_vec();
        let [out_f, in_f] = weight.shape() else {
            return Err(TensorError::Rank {
                op: "linear",
                expected: 2,
                got: weight.shape().to_vec(),
            });
        };
        let (out_f, in_f) = (*out_f, *in_f);
        if shape.last() != Some(&in_f) {
            return Err(TensorError::mismatch("linear", &shape, weight.shape()));
        }
        let rows = self.value().numel() / in_f.max(1);
        let flat = self.reshape(&[rows, in_f])?;
        let mut y = flat.matmul_t(weight, false, true)?;
        if let Some(b) = bias {
            y = y.add(b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = out_f;
        y.reshape(&out_shape)
    }
}

fn mat_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [r, c] => Ok((1, r, c)),
        [b, r, c] => Ok((b, r, c)),
        _ => Err(TensorError::Rank {
            op: "matmul",
            expected: 3,
            got: shape.to_vec(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k).map(|p| a.data()[i * k + p] * b.data()[p * n + j]).sum();
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::new(&[3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = Var::constant(a.clone()).matmul(&Var::constant(b.clone())).unwrap();
        assert_eq!(c.value().data(), naive(&a, &b).as_slice());
    }

    #[test]
    fn transposed_operands() {
        let a = Tensor::new(&[3, 2], vec![1., 4., 2., 5., 3., 6.]).unwrap();
        let b = Tensor::new(&[2, 3], vec![7., 9., 11., 8., 10., 12.]).unwrap();
        let c = Var::constant(a).matmul_t(&Var::constant(b), true, true).unwrap();
        assert_eq!(c.value().data(), &[58., 64., 139., 154.]);
    }
}
