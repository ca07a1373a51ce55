use crate::{Result, Tensor, TensorError, Var};

impl Var {
    /// Max pooling with a `kernel × kernel` window; padded positions never win.
    pub fn max_pool2d(&self, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4()?;
        if kernel == 0 || stride == 0 || padding * 2 > kernel || h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(TensorError::Shape {
                op: "max_pool2d",
                detail: format!("kernel {kernel}, stride {stride}, padding {padding} on {:?}", self.shape()),
            });
        }
        let ho = (h + 2 * padding - kernel) / stride + 1;
        let wo = (w + 2 * padding - kernel) / stride + 1;
        let x = self.value().data();
        let mut out = vec![0.0; n * c * ho * wo];
        let mut arg = vec![0usize; out.len()];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0;
                    for i in 0..kernel {
                        let Some(ih) = (oh * stride + i).checked_sub(padding).filter(|&v| v < h) else {
                            continue;
                        };
                        for j in 0..kernel {
                            let Some(iw) = (ow * stride + j).checked_sub(padding).filter(|&v| v < w) else {
                                continue;
                            };
                            let v = src[ih * w + iw];
                            if v > best {
                                best = v;
                                best_at = ih * w + iw;
                            }
                        }
                    }
                    let o = (plane * ho + oh) * wo + ow;
                    out[o] = best;
                    arg[o] = plane * h * w + best_at;
                }
            }
        }
        let in_shape = self.shape().to_vec();
        let value = Tensor::from_parts(vec![n, c, ho, wo], out);
        Ok(Var::from_op(value, &[self], move |g, _| {
            let mut gx = vec![0.0; in_shape.iter().product()];
            for (&a, &gv) in arg.iter().zip(g.data()) {
                gx[a] += gv;
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
        }))
    }

    /// Adaptive average pooling with windows `[floor(i·H/out), ceil((i+1)·H/out))`.
    pub fn adaptive_avg_pool2d(&self, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4()?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::Shape {
                op: "adaptive_avg_pool2d",
                detail: format!("output {out_h}x{out_w}"),
            });
        }
        let rows = windows(h, out_h);
        let cols = windows(w, out_w);
        let x = self.value().data();
        let mut out = vec![0.0; n * c * out_h * out_w];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            for (oh, &(r0, r1)) in rows.iter().enumerate() {
                for (ow, &(c0, c1)) in cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for ih in r0..r1 {
                        acc += src[ih * w + c0..ih * w + c1].iter().sum::<f64>();
                    }
                    out[(plane * out_h + oh) * out_w + ow] = acc / ((r1 - r0) * (c1 - c0)) as f64;
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, out_h, out_w], out);
        Ok(Var::from_op(value, &[self], move |g, _| {
            let mut gx = vec![0.0; n * c * h * w];
            for plane in 0..n * c {
                for (oh, &(r0, r1)) in rows.iter().enumerate() {
                    for (ow, &(c0, c1)) in cols.iter().enumerate() {
                        let gv = g.data()[(plane * out_h + oh) * out_w + ow] / ((r1 - r0) * (c1 - c0)) as f64;
                        for ih in r0..r1 {
                            for v in &mut gx[plane * h * w + ih * w + c0..plane * h * w + ih * w + c1] {
                                *v += gv;
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![n, c, h, w], gx))]
        }))
    }
}

fn windows(len: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| ((i * len) / out, ((i + 1) * len).div_ceil(out)))
        .collect()
}
