use crate::{Result, Tensor, TensorError, Var};

/// Source taps `(lo, hi, weight_hi)` for each output index under half-pixel alignment.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

impl Var {
    /// Bilinear resampling to `out_h × out_w` (half-pixel centres, edge clamped).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4()?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(TensorError::Shape {
                op: "resize_bilinear",
                detail: format!("{:?} -> {out_h}x{out_w}", self.shape()),
            });
        }
        if (out_h, out_w) == (h, w) {
            return Ok(self.clone());
        }
        let ty = taps(h, out_h);
        let tx = taps(w, out_w);
        let x = self.value().data();
        let mut out = vec![0.0; n * c * out_h * out_w];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
            for (oh, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ow, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oh * out_w + ow] = top * (1.0 - fy) + bottom * fy;
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, out_h, out_w], out);
        Ok(Var::from_op(value, &[self], move |g, _| {
            let mut gx = vec![0.0; n * c * h * w];
            for plane in 0..n * c {
                let gp = &g.data()[plane * out_h * out_w..(plane + 1) * out_h * out_w];
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                for (oh, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ow, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let gv = gp[oh * out_w + ow];
                        dst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                        dst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                        dst[y1 * w + x0] += gv * fy * (1.0 - fx);
                        dst[y1 * w + x1] += gv * fy * fx;
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![n, c, h, w], gx))]
        }))
    }

    /// Bilinear upsampling by an integer factor.
    pub fn upsample_bilinear(&self, factor: usize) -> Result<Var> {
        let [_, _, h, w] = self.dims4()?;
        self.resize_bilinear(h * factor, w * factor)
    }
}
