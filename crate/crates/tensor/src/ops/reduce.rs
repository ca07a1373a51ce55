use super::elementwise::{broadcast_to, reduce_to};
use crate::tensor::numel_of;
use crate::{Result, Tensor, TensorError, Var};

/// Splits `shape` around `axis` into `(outer, len, inner)` extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::Shape {
            op,
            detail: format!("axis {axis} out of range for {shape:?}"),
        });
    }
    Ok(())
}

impl Var {
    /// Sum of every element, as a shape-`[1]` value.
    pub fn sum_all(&self) -> Var {
        let value = Tensor::scalar(self.value().sum());
        let shape = self.shape().to_vec();
        Var::from_op(value, &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.data()[0]))]
        })
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().numel().max(1) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sums over `axes`, keeping them as extent-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Var> {
        let shape = self.shape().to_vec();
        for &a in axes {
            check_axis("sum_axes", &shape, a)?;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let value = reduce_to(self.value(), &out_shape);
        Ok(Var::from_op(value, &[self], move |g, _| {
            vec![Some(broadcast_to(g, &shape))]
        }))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Var> {
        let count: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        Ok(self.sum_axes(axes)?.scale(1.0 / count.max(1) as f64))
    }

    /// Maximum along `axis` (kept with extent 1); gradient flows to the first maximal entry.
    pub fn max_axis(&self, axis: usize) -> Result<Var> {
        check_axis("max_axis", self.shape(), axis)?;
        let shape = self.shape().to_vec();
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.value().data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let row = &x[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (i, &v) in row.iter().enumerate() {
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        arg[o * inner + i] = k;
                    }
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let value = Tensor::from_parts(out_shape, out);
        Ok(Var::from_op(value, &[self], move |g, _| {
            let mut gx = vec![0.0; numel_of(&shape)];
            for o in 0..outer {
                for i in 0..inner {
                    let k = arg[o * inner + i];
                    gx[(o * len + k) * inner + i] += g.data()[o * inner + i];
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), gx))]
        }))
    }
}
