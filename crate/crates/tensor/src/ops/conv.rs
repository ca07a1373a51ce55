use super::linalg::gemm;
use crate::{Result, Tensor, TensorError, Var};

/// Stride, zero padding and channel grouping of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn grouped(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn output_size(&self, input: usize, kernel: usize) -> usize {
        (input + 2 * self.padding).saturating_sub(kernel) / self.stride + 1
    }
}

/// Upper bound on im2col buffer elements per chunk.
const COL_BUDGET: usize = 1 << 21;

#[derive(Clone, Copy)]
struct Geometry {
    cin_g: usize,
    cout_g: usize,
    groups: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }

    /// Source pixel of kernel tap `(i, j)` for output `(oh, ow)`, if inside the image.
    #[inline]
    fn source(&self, oh: usize, ow: usize, i: usize, j: usize) -> Option<usize> {
        let ih = (oh * self.stride + i).checked_sub(self.pad)?;
        let iw = (ow * self.stride + j).checked_sub(self.pad)?;
        (ih < self.h && iw < self.w).then_some(ih * self.w + iw)
    }

    fn im2col(&self, x: &[f64], p0: usize, p1: usize, cols: &mut [f64]) {
        let width = p1 - p0;
        for c in 0..self.cin_g {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * width;
                    for p in p0..p1 {
                        cols[row + p - p0] = self
                            .source(p / self.wo, p % self.wo, i, j)
                            .map_or(0.0, |s| plane[s]);
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], p0: usize, p1: usize, gx: &mut [f64]) {
        let width = p1 - p0;
        for c in 0..self.cin_g {
            let plane = &mut gx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * width;
                    for p in p0..p1 {
                        if let Some(s) = self.source(p / self.wo, p % self.wo, i, j) {
                            plane[s] += cols[row + p - p0];
                        }
                    }
                }
            }
        }
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let hw = self.ho * self.wo;
        let step = (COL_BUDGET / self.k().max(1)).clamp(1, hw.max(1));
        (0..hw).step_by(step).map(move |p0| (p0, (p0 + step).min(hw)))
    }
}

impl Var {
    /// 2-D cross-correlation of `[N, Cin, H, W]` with weight `[Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(&self, weight: &Var, bias: Option<&Var>, spec: Conv2dSpec) -> Result<Var> {
        let [n, cin, h, w] = self.dims4()?;
        let [cout, cin_g, kh, kw] = weight.dims4()?;
        let groups = spec.groups.max(1);
        let bad = cin % groups != 0
            || cout % groups != 0
            || cin / groups != cin_g
            || spec.stride == 0
            || h + 2 * spec.padding < kh
            || w + 2 * spec.padding < kw
            || bias.is_some_and(|b| b.shape() != [cout]);
        if bad {
            return Err(TensorError::Shape {
                op: "conv2d",
                detail: format!(
                    "input {:?}, weight {:?}, bias {:?}, {spec:?}",
                    self.shape(),
                    weight.shape(),
                    bias.map(|b| b.shape().to_vec())
                ),
            });
        }
        let geo = Geometry {
            cin_g,
            cout_g: cout / groups,
            groups,
            h,
            w,
            kh,
            kw,
            ho: spec.output_size(h, kh),
            wo: spec.output_size(w, kw),
            stride: spec.stride,
            pad: spec.padding,
        };
        let x = self.shared_value();
        let wt = weight.shared_value();
        let mut out = conv_forward(&geo, n, x.data(), wt.data());
        if let Some(b) = bias {
            let hw = geo.ho * geo.wo;
            for (i, plane) in out.chunks_mut(hw).enumerate() {
                let bv = b.value().data()[i % cout];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::from_parts(vec![n, cout, geo.ho, geo.wo], out);
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(Var::from_op(value, &inputs, move |g, needs| {
            let (gx, gw) = conv_backward(&geo, n, x.data(), wt.data(), g.data(), needs[0], needs[1]);
            let mut grads = vec![
                gx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
                gw.map(|d| Tensor::from_parts(wt.shape().to_vec(), d)),
            ];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| {
                    let hw = geo.ho * geo.wo;
                    let mut gb = vec![0.0; cout];
                    for (i, plane) in g.data().chunks(hw).enumerate() {
                        gb[i % cout] += plane.iter().sum::<f64>();
                    }
                    Tensor::from_parts(vec![cout], gb)
                }));
            }
            grads
        }))
    }
}

fn conv_forward(geo: &Geometry, n: usize, x: &[f64], wt: &[f64]) -> Vec<f64> {
    let hw_in = geo.h * geo.w;
    let hw = geo.ho * geo.wo;
    let cin = geo.cin_g * geo.groups;
    let cout = geo.cout_g * geo.groups;
    let k = geo.k();
    let mut out = vec![0.0; n * cout * hw];
    if geo.depthwise() {
        for b in 0..n {
            for c in 0..cin {
                let src = &x[(b * cin + c) * hw_in..(b * cin + c + 1) * hw_in];
                let dst = &mut out[(b * cout + c) * hw..(b * cout + c + 1) * hw];
                let taps = &wt[c * geo.kh * geo.kw..(c + 1) * geo.kh * geo.kw];
                depthwise_plane(geo, src, taps, dst);
            }
        }
        return out;
    }
    let mut cols = Vec::new();
    for b in 0..n {
        for g in 0..geo.groups {
            let xs = &x[(b * cin + g * geo.cin_g) * hw_in..];
            let ws = &wt[g * geo.cout_g * k..(g + 1) * geo.cout_g * k];
            let os = &mut out[(b * cout + g * geo.cout_g) * hw..(b * cout + (g + 1) * geo.cout_g) * hw];
            if geo.pointwise() {
                gemm(geo.cout_g, k, hw, ws, (k as isize, 1), xs, (hw as isize, 1), 0.0, os, (hw as isize, 1));
                continue;
            }
            for (p0, p1) in geo.chunks() {
                let width = p1 - p0;
                cols.resize(k * width, 0.0);
                geo.im2col(xs, p0, p1, &mut cols);
                gemm(
                    geo.cout_g,
                    k,
                    width,
                    ws,
                    (k as isize, 1),
                    &cols,
                    (width as isize, 1),
                    0.0,
                    &mut os[p0..],
                    (hw as isize, 1),
                );
            }
        }
    }
    out
}

fn depthwise_plane(geo: &Geometry, src: &[f64], taps: &[f64], dst: &mut [f64]) {
    for oh in 0..geo.ho {
        for ow in 0..geo.wo {
            let mut acc = 0.0;
            for i in 0..geo.kh {
                for j in 0..geo.kw {
                    if let Some(s) = geo.source(oh, ow, i, j) {
                        acc += taps[i * geo.kw + j] * src[s];
                    }
                }
            }
            dst[oh * geo.wo + ow] = acc;
        }
    }
}

#[allow(clippy::type_complexity)]
fn conv_backward(
    geo: &Geometry,
    n: usize,
    x: &[f64],
    wt: &[f64],
    g: &[f64],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let hw_in = geo.h * geo.w;
    let hw = geo.ho * geo.wo;
    let cin = geo.cin_g * geo.groups;
    let cout = geo.cout_g * geo.groups;
    let k = geo.k();
    let mut gx = need_x.then(|| vec![0.0; n * cin * hw_in]);
    let mut gw = need_w.then(|| vec![0.0; wt.len()]);
    if geo.depthwise() {
        let kk = geo.kh * geo.kw;
        for b in 0..n {
            for c in 0..cin {
                let src = &x[(b * cin + c) * hw_in..(b * cin + c + 1) * hw_in];
                let gp = &g[(b * cout + c) * hw..(b * cout + c + 1) * hw];
                let taps = &wt[c * kk..(c + 1) * kk];
                for oh in 0..geo.ho {
                    for ow in 0..geo.wo {
                        let go = gp[oh * geo.wo + ow];
                        for i in 0..geo.kh {
                            for j in 0..geo.kw {
                                if let Some(s) = geo.source(oh, ow, i, j) {
                                    if let Some(gw) = gw.as_mut() {
                                        gw[c * kk + i * geo.kw + j] += go * src[s];
                                    }
                                    if let Some(gx) = gx.as_mut() {
                                        gx[(b * cin + c) * hw_in + s] += go * taps[i * geo.kw + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        return (gx, gw);
    }
    let mut cols = Vec::new();
    let mut gcols = Vec::new();
    for b in 0..n {
        for grp in 0..geo.groups {
            let xoff = (b * cin + grp * geo.cin_g) * hw_in;
            let xs = &x[xoff..];
            let ws = &wt[grp * geo.cout_g * k..(grp + 1) * geo.cout_g * k];
            let gs = &g[(b * cout + grp * geo.cout_g) * hw..];
            let wrange = grp * geo.cout_g * k..(grp + 1) * geo.cout_g * k;
            if geo.pointwise() {
                if let Some(gw) = gw.as_mut() {
                    gemm(geo.cout_g, hw, k, gs, (hw as isize, 1), xs, (1, hw as isize), 1.0, &mut gw[wrange.clone()], (k as isize, 1));
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(k, geo.cout_g, hw, ws, (1, k as isize), gs, (hw as isize, 1), 1.0, &mut gx[xoff..xoff + k * hw], (hw as isize, 1));
                }
                continue;
            }
            for (p0, p1) in geo.chunks() {
                let width = p1 - p0;
                if let Some(gw) = gw.as_mut() {
                    cols.resize(k * width, 0.0);
                    geo.im2col(xs, p0, p1, &mut cols);
                    // gw += g_chunk [cout_g × width] · cols^T [width × k]
                    gemm(
                        geo.cout_g,
                        width,
                        k,
                        &gs[p0..],
                        (hw as isize, 1),
                        &cols,
                        (1, width as isize),
                        1.0,
                        &mut gw[wrange.clone()],
                        (k as isize, 1),
                    );
                }
                if let Some(gx) = gx.as_mut() {
                    gcols.resize(k * width, 0.0);
                    // gcols = w^T [k × cout_g] · g_chunk [cout_g × width]
                    gemm(
                        k,
                        geo.cout_g,
                        width,
                        ws,
                        (1, k as isize),
                        &gs[p0..],
                        (hw as isize, 1),
                        0.0,
                        &mut gcols,
                        (width as isize, 1),
                    );
                    geo.col2im(&gcols, p0, p1, &mut gx[xoff..xoff + geo.cin_g * hw_in]);
                }
            }
        }
    }
    (gx, gw)
}
