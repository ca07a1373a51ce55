use super::reduce::{check_axis, split_axis};
use crate::{Result, Tensor, TensorError, Var};

impl Var {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.value().clone().reshape(shape)?;
        let src = self.shape().to_vec();
        Ok(Var::from_op(value, &[self], move |g, _| {
            vec![Some(g.clone().reshape(&src).expect("same element count"))]
        }))
    }

    /// Reorders axes; `axes[i]` is the source axis of output axis `i`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var> {
        let value = self.value().permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(Var::from_op(value, &[self], move |g, _| {
            vec![Some(g.permute(&inverse).expect("valid inverse"))]
        }))
    }

    /// Joins `parts` along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| TensorError::Shape {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        check_axis("concat", first.shape(), axis)?;
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = 0;
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == out_shape.len()
                && s.iter().zip(&out_shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::mismatch("concat", first.shape(), s));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let total = out_shape[axis];
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let mut data = vec![0.0; out_shape.iter().product()];
        let mut start = 0;
        for (p, &len) in parts.iter().zip(&lens) {
            let src = p.value().data();
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                data[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            start += len;
        }
        let value = Tensor::from_parts(out_shape.clone(), data);
        Ok(Var::from_op(value, parts, move |g, needs| {
            let mut start = 0;
            lens.iter()
                .zip(needs)
                .map(|(&len, &need)| {
                    let piece = need.then(|| narrow_tensor(g, axis, start, len));
                    start += len;
                    piece
                })
                .collect()
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        check_axis("narrow", self.shape(), axis)?;
        if start + len > self.shape()[axis] {
            return Err(TensorError::Shape {
                op: "narrow",
                detail: format!("range {start}..{} exceeds extent {}", start + len, self.shape()[axis]),
            });
        }
        let value = narrow_tensor(self.value(), axis, start, len);
        let shape = self.shape().to_vec();
        Ok(Var::from_op(value, &[self], move |g, _| {
            let (outer, full, inner) = split_axis(&shape, axis);
            let mut gx = vec![0.0; shape.iter().product()];
            for o in 0..outer {
                let dst = (o * full + start) * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_parts(shape.clone(), gx))]
        }))
    }

    /// Reverses the order of entries along `axis`.
    pub fn flip(&self, axis: usize) -> Result<Var> {
        check_axis("flip", self.shape(), axis)?;
        let value = flip_tensor(self.value(), axis);
        Ok(Var::from_op(value, &[self], move |g, _| vec![Some(flip_tensor(g, axis))]))
    }
}

pub(crate) fn narrow_tensor(t: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let (outer, full, inner) = split_axis(t.shape(), axis);
    let mut shape = t.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let src = (o * full + start) * inner;
        data.extend_from_slice(&t.data()[src..src + len * inner]);
    }
    Tensor::from_parts(shape, data)
}

pub(crate) fn flip_tensor(t: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = split_axis(t.shape(), axis);
    let mut data = Vec::with_capacity(t.numel());
    for o in 0..outer {
        for k in (0..len).rev() {
            let src = (o * len + k) * inner;
            data.extend_from_slice(&t.data()[src..src + inner]);
        }
    }
    Tensor::from_parts(t.shape().to_vec(), data)
}
