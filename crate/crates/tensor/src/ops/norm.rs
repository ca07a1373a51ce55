use super::reduce::{check_axis, split_axis};
use crate::{Result, Tensor, TensorError, Var};

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, for running-estimate updates.
    pub var_unbiased: Vec<f64>,
}

/// Standardised values plus one inverse deviation per `(outer, inner)` group.
struct Normalised {
    xhat: Vec<f64>,
    istd: Vec<f64>,
}

fn check_affine(op: &'static str, len: usize, gamma: &Var, beta: &Var) -> Result<()> {
    if gamma.shape() != [len] || beta.shape() != [len] {
        return Err(TensorError::Shape {
            op,
            detail: format!("affine shapes {:?}/{:?} for {len} features", gamma.shape(), beta.shape()),
        });
    }
    Ok(())
}

impl Var {
    /// Batch normalisation over axis 1 of `[N, C, ...]`.
    ///
    /// With `running = None` the batch statistics are used and returned;
    /// otherwise the supplied `(mean, var)` estimates normalise the input.
    pub fn batch_norm(
        &self,
        gamma: &Var,
        beta: &Var,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        if self.shape().len() < 2 {
            return Err(TensorError::Rank {
                op: "batch_norm",
                expected: 2,
                got: self.shape().to_vec(),
            });
        }
        let (outer, c, inner) = split_axis(self.shape(), 1);
        check_affine("batch_norm", c, gamma, beta)?;
        let x = self.value().data();
        let count = outer * inner;
        let (mean, var, stats) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), None),
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for o in 0..outer {
                        s += x[(o * c + ch) * inner..(o * c + ch + 1) * inner].iter().sum::<f64>();
                    }
                    let mu = s / count as f64;
                    let mut ss = 0.0;
                    for o in 0..outer {
                        ss += x[(o * c + ch) * inner..(o * c + ch + 1) * inner]
                            .iter()
                            .map(|v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = ss / count as f64;
                }
                let unbiased = var
                    .iter()
                    .map(|v| v * count as f64 / (count.max(2) - 1) as f64)
                    .collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var_unbiased: unbiased,
                };
                (mean, var, Some(stats))
            }
        };
        let istd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gm, bt) = (gamma.value().data(), beta.value().data());
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for ch in 0..c {
                let r = (o * c + ch) * inner..(o * c + ch + 1) * inner;
                for i in r {
                    xhat[i] = (x[i] - mean[ch]) * istd[ch];
                    out[i] = xhat[i] * gm[ch] + bt[ch];
                }
            }
        }
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        let shape = self.shape().to_vec();
        let gamma_v = gamma.shared_value();
        let train = running.is_none();
        let y = Var::from_op(value, &[self, gamma, beta], move |g, needs| {
            let g = g.data();
            let gm = gamma_v.data();
            let mut gg = vec![0.0; c];
            let mut gb = vec![0.0; c];
            for o in 0..outer {
                for ch in 0..c {
                    for i in (o * c + ch) * inner..(o * c + ch + 1) * inner {
                        gg[ch] += g[i] * xhat[i];
                        gb[ch] += g[i];
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; g.len()];
                let m = count as f64;
                for o in 0..outer {
                    for ch in 0..c {
                        let scale = gm[ch] * istd[ch];
                        for i in (o * c + ch) * inner..(o * c + ch + 1) * inner {
                            gx[i] = if train {
                                scale * (g[i] - gb[ch] / m - xhat[i] * gg[ch] / m)
                            } else {
                                scale * g[i]
                            };
                        }
                    }
                }
                Tensor::from_parts(shape.clone(), gx)
            });
            vec![
                gx,
                needs[1].then(|| Tensor::from_parts(vec![c], gg.clone())),
                needs[2].then(|| Tensor::from_parts(vec![c], gb.clone())),
            ]
        });
        Ok((y, stats))
    }

    /// Layer normalisation over a single `axis`, with per-feature affine terms.
    pub fn layer_norm(&self, axis: usize, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
        check_axis("layer_norm", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        check_affine("layer_norm", len, gamma, beta)?;
        let norm = normalise(self.value().data(), outer, len, inner, eps);
        let (gm, bt) = (gamma.value().data(), beta.value().data());
        let mut out = vec![0.0; norm.xhat.len()];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    let at = (o * len + k) * inner + i;
                    out[at] = norm.xhat[at] * gm[k] + bt[k];
                }
            }
        }
        let value = Tensor::from_parts(self.shape().to_vec(), out);
        let shape = self.shape().to_vec();
        let gamma_v = gamma.shared_value();
        Ok(Var::from_op(value, &[self, gamma, beta], move |g, needs| {
            let g = g.data();
            let gm = gamma_v.data();
            let xhat = &norm.xhat;
            let mut gg = vec![0.0; len];
            let mut gb = vec![0.0; len];
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        let at = (o * len + k) * inner + i;
                        gg[k] += g[at] * xhat[at];
                        gb[k] += g[at];
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; g.len()];
                let l = len as f64;
                for o in 0..outer {
                    for i in 0..inner {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for k in 0..len {
                            let at = (o * len + k) * inner + i;
                            let d = g[at] * gm[k];
                            s1 += d;
                            s2 += d * xhat[at];
                        }
                        let istd = norm.istd[o * inner + i];
                        for k in 0..len {
                            let at = (o * len + k) * inner + i;
                            let d = g[at] * gm[k];
                            gx[at] = istd * (d - s1 / l - xhat[at] * s2 / l);
                        }
                    }
                }
                Tensor::from_parts(shape.clone(), gx)
            });
            vec![
                gx,
                needs[1].then(|| Tensor::from_parts(vec![len], gg.clone())),
                needs[2].then(|| Tensor::from_parts(vec![len], gb.clone())),
            ]
        }))
    }
}

fn normalise(x: &[f64], outer: usize, len: usize, inner: usize, eps: f64) -> Normalised {
    let mut xhat = vec![0.0; x.len()];
    let mut istd = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mean = (0..len).map(|k| x[at(k)]).sum::<f64>() / len as f64;
            let var = (0..len).map(|k| (x[at(k)] - mean).powi(2)).sum::<f64>() / len as f64;
            let s = 1.0 / (var + eps).sqrt();
            istd[o * inner + i] = s;
            for k in 0..len {
                xhat[at(k)] = (x[at(k)] - mean) * s;
            }
        }
    }
    Normalised { xhat, istd }
}
