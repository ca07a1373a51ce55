use super::reduce::{check_axis, split_axis};
use crate::{Result, Tensor, Var};

impl Var {
    pub fn softmax(&self, axis: usize) -> Result<Var> {
        check_axis("softmax", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let y = softmax_values(self.value(), outer, len, inner);
        let ys = std::sync::Arc::new(y.clone());
        Ok(Var::from_op(y, &[self], move |g, _| {
            // gx = y * (g - sum_k g_k y_k)
            let (g, y) = (g.data(), ys.data());
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..len {
                        gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(ys.shape().to_vec(), gx))]
        }))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var> {
        check_axis("log_softmax", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.value().data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..len).map(|k| (x[at(k)] - m).exp()).sum::<f64>().ln();
                for k in 0..len {
                    out[at(k)] = x[at(k)] - lse;
                }
            }
        }
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        let ls = std::sync::Arc::new(value.clone());
        Ok(Var::from_op(value, &[self], move |g, _| {
            // gx = g - softmax * sum_k g_k
            let (g, l) = (g.data(), ls.data());
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let total: f64 = (0..len).map(|k| g[at(k)]).sum();
                    for k in 0..len {
                        gx[at(k)] = g[at(k)] - l[at(k)].exp() * total;
                    }
                }
            }
            vec![Some(Tensor::from_parts(ls.shape().to_vec(), gx))]
        }))
    }
}

pub(crate) fn softmax_values(t: &Tensor, outer: usize, len: usize, inner: usize) -> Tensor {
    let x = t.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let m = (0..len).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..len {
                let e = (x[at(k)] - m).exp();
                out[at(k)] = e;
                total += e;
            }
            for k in 0..len {
                out[at(k)] /= total;
            }
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}
