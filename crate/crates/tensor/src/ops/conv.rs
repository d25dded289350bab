//! NCHW convolutions (cross-correlation convention) via im2col + GEMM.

use crate::error::{invalid, mismatch, Result};
use crate::ops::linalg::gemm;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

pub fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

/// `img` is `[c, h, w]`; `cols` becomes `[c·k·k, oh·ow]`.
fn im2col(img: &[f64], g: &Geom, cols: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &img[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `img`.
fn col2im(cols: &[f64], g: &Geom, img: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            img[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(g: &Geom) -> bool {
    g.k == 1 && g.stride == 1 && g.pad == 0
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, o: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [o] => Err(mismatch(op, b.shape(), &[o])),
        _ => Ok(()),
    }
}

impl Tensor {
    /// 2-D convolution. `x: [B,C,H,W]`, `w: [O, C/groups, k, k]`, `bias: [O]`.
    pub fn conv2d(&self, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize, groups: usize) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(mismatch("conv2d", xs, ws));
        }
        let (b, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, cg, k) = (ws[0], ws[1], ws[2]);
        if groups == 0 || c % groups != 0 || o % groups != 0 || cg != c / groups {
            return Err(mismatch("conv2d", xs, ws));
        }
        check_bias("conv2d", bias, o)?;
        let (oh, ow) = match (conv_out_size(h, k, stride, pad), conv_out_size(wd, k, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(invalid("conv2d", format!("nonpositive output size for {xs:?} k={k} s={stride} p={pad}"))),
        };
        let og = o / groups;
        let geom = Geom { c: cg, h, w: wd, k, stride, pad, oh, ow };
        let (rows, p) = (geom.rows(), geom.cols());
        let mut out = vec![0.0; b * o * p];
        let mut cols = vec![0.0; rows * p];
        let (xd, wdat) = (self.data(), w.data());
        for n in 0..b {
            for gi in 0..groups {
                let img = &xd[(n * c + gi * cg) * h * wd..(n * c + (gi + 1) * cg) * h * wd];
                let cm: &[f64] = if is_pointwise(&geom) {
                    img
                } else {
                    im2col(img, &geom, &mut cols);
                    &cols
                };
                let dst = &mut out[(n * o + gi * og) * p..(n * o + (gi + 1) * og) * p];
                gemm(og, rows, p, &wdat[gi * og * rows..(gi + 1) * og * rows], false, cm, false, dst, 0.0);
            }
            if let Some(bias) = bias {
                for (oc, &bv) in bias.data().iter().enumerate() {
                    for v in &mut out[(n * o + oc) * p..(n * o + oc + 1) * p] {
                        *v += bv;
                    }
                }
            }
        }
        let (xc, wc) = (self.clone(), w.clone());
        let mut parents: Vec<&Tensor> = vec![self, w];
        if let Some(bias) = bias {
            parents.push(bias);
        }
        Tensor::from_op(
            "conv2d",
            vec![b, o, oh, ow],
            out,
            &parents,
            Box::new(move |g, needs| {
                let (xd, wdat) = (xc.data(), wc.data());
                let mut gx = needs[0].then(|| vec![0.0; xd.len()]);
                let mut gw = needs[1].then(|| vec![0.0; wdat.len()]);
                let mut cols = vec![0.0; rows * p];
                let mut dcols = vec![0.0; rows * p];
                for n in 0..b {
                    for gi in 0..groups {
                        let gy = &g[(n * o + gi * og) * p..(n * o + (gi + 1) * og) * p];
                        let wg = &wdat[gi * og * rows..(gi + 1) * og * rows];
                        let img_range = (n * c + gi * cg) * h * wd..(n * c + (gi + 1) * cg) * h * wd;
                        if let Some(gw) = gw.as_mut() {
                            let img = &xd[img_range.clone()];
                            let cm: &[f64] = if is_pointwise(&geom) {
                                img
                            } else {
                                im2col(img, &geom, &mut cols);
                                &cols
                            };
                            gemm(og, p, rows, gy, false, cm, true, &mut gw[gi * og * rows..(gi + 1) * og * rows], 1.0);
                        }
                        if let Some(gx) = gx.as_mut() {
                            if is_pointwise(&geom) {
                                gemm(rows, og, p, wg, true, gy, false, &mut gx[img_range], 1.0);
                            } else {
                                gemm(rows, og, p, wg, true, gy, false, &mut dcols, 0.0);
                                col2im(&dcols, &geom, &mut gx[img_range]);
                            }
                        }
                    }
                }
                let mut res = vec![gx, gw];
                if needs.len() == 3 {
                    res.push(needs[2].then(|| {
                        let mut gb = vec![0.0; o];
                        for n in 0..b {
                            for (oc, acc) in gb.iter_mut().enumerate() {
                                *acc += g[(n * o + oc) * p..(n * o + oc + 1) * p].iter().sum::<f64>();
                            }
                        }
                        gb
                    }));
                }
                res
            }),
        )
    }

    /// Per-channel convolution: `w: [C, 1, k, k]`.
    pub fn depthwise_conv2d(&self, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
        let c = *self.shape().get(1).ok_or_else(|| mismatch("depthwise_conv2d", self.shape(), w.shape()))?;
        self.conv2d(w, bias, stride, pad, c)
    }

    /// Transposed convolution. `x: [B,Cin,H,W]`, `w: [Cin, Cout, k, k]`;
    /// output extent `(H−1)·stride − 2·pad + k`.
    pub fn conv_transpose2d(&self, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || ws[0] != xs[1] || stride == 0 {
            return Err(mismatch("conv_transpose2d", xs, ws));
        }
        let (b, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[1], ws[2]);
        check_bias("conv_transpose2d", bias, cout)?;
        let span_h = (h - 1) * stride + k;
        let span_w = (wd - 1) * stride + k;
        if span_h <= 2 * pad || span_w <= 2 * pad {
            return Err(invalid("conv_transpose2d", "nonpositive output size"));
        }
        let (oh, ow) = (span_h - 2 * pad, span_w - 2 * pad);
        // the output plays the image side of an ordinary convolution geometry
        let geom = Geom { c: cout, h: oh, w: ow, k, stride, pad, oh: h, ow: wd };
        let (rows, p) = (geom.rows(), geom.cols());
        let mut out = vec![0.0; b * cout * oh * ow];
        let mut cols = vec![0.0; rows * p];
        for n in 0..b {
            let xn = &self.data()[n * cin * p..(n + 1) * cin * p];
            gemm(rows, cin, p, w.data(), true, xn, false, &mut cols, 0.0);
            let dst = &mut out[n * cout * oh * ow..(n + 1) * cout * oh * ow];
            col2im(&cols, &geom, dst);
            if let Some(bias) = bias {
                for (oc, &bv) in bias.data().iter().enumerate() {
                    for v in &mut dst[oc * oh * ow..(oc + 1) * oh * ow] {
                        *v += bv;
                    }
                }
            }
        }
        let (xc, wc) = (self.clone(), w.clone());
        let mut parents: Vec<&Tensor> = vec![self, w];
        if let Some(bias) = bias {
            parents.push(bias);
        }
        Tensor::from_op(
            "conv_transpose2d",
            vec![b, cout, oh, ow],
            out,
            &parents,
            Box::new(move |g, needs| {
                let mut gx = needs[0].then(|| vec![0.0; xc.numel()]);
                let mut gw = needs[1].then(|| vec![0.0; wc.numel()]);
                let mut gcols = vec![0.0; rows * p];
                let plane = cout * oh * ow;
                for n in 0..b {
                    im2col(&g[n * plane..(n + 1) * plane], &geom, &mut gcols);
                    if let Some(gx) = gx.as_mut() {
                        gemm(cin, rows, p, wc.data(), false, &gcols, false, &mut gx[n * cin * p..(n + 1) * cin * p], 0.0);
                    }
                    if let Some(gw) = gw.as_mut() {
                        let xn = &xc.data()[n * cin * p..(n + 1) * cin * p];
                        gemm(cin, p, rows, xn, false, &gcols, true, gw, 1.0);
                    }
                }
                let mut res = vec![gx, gw];
                if needs.len() == 3 {
                    res.push(needs[2].then(|| {
                        let mut gb = vec![0.0; cout];
                        for n in 0..b {
                            for (oc, acc) in gb.iter_mut().enumerate() {
                                let s = (n * cout + oc) * oh * ow;
                                *acc += g[s..s + oh * ow].iter().sum::<f64>();
                            }
                        }
                        gb
                    }));
                }
                res
            }),
        )
    }
}
