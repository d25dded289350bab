//! Parameter-free spatial resampling: average pooling and bilinear resize.

use crate::error::{invalid, Result};
use crate::ops::conv::conv_out_size;
use crate::tensor::Tensor;

fn nchw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(invalid(op, format!("expected NCHW, got {:?}", t.shape()))),
    }
}

/// Source taps for one output coordinate under the align-corners-false rule.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap { lo, hi, frac: src - lo as f64 }
        })
        .collect()
}

impl Tensor {
    /// Average pooling; each window is normalized by the number of in-bounds
    /// cells, so padding never dilutes the mean.
    pub fn avg_pool2d(&self, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
        let (b, c, h, w) = nchw("avg_pool2d", self)?;
        if k == 0 {
            return Err(invalid("avg_pool2d", "kernel must be positive"));
        }
        let (oh, ow) = match (conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(invalid("avg_pool2d", "nonpositive output size")),
        };
        let range = |o: usize, n: usize| {
            let start = (o * stride) as isize - pad as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + k as isize).min(n as isize)) as usize;
            (lo, hi)
        };
        let rows: Vec<(usize, usize)> = (0..oh).map(|o| range(o, h)).collect();
        let cols: Vec<(usize, usize)> = (0..ow).map(|o| range(o, w)).collect();
        let src = self.data();
        let mut out = vec![0.0; b * c * oh * ow];
        for plane in 0..b * c {
            let img = &src[plane * h * w..(plane + 1) * h * w];
            // prefix sums make large kernels cheap
            let mut integral = vec![0.0; (h + 1) * (w + 1)];
            for y in 0..h {
                let mut row = 0.0;
                for x in 0..w {
                    row += img[y * w + x];
                    integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
                }
            }
            for (oy, &(y0, y1)) in rows.iter().enumerate() {
                for (ox, &(x0, x1)) in cols.iter().enumerate() {
                    let s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
                        + integral[y0 * (w + 1) + x0];
                    let n = ((y1 - y0) * (x1 - x0)) as f64;
                    out[(plane * oh + oy) * ow + ox] = if k == 1 { img[y0 * w + x0] } else { s / n };
                }
            }
        }
        Tensor::from_op(
            "avg_pool2d",
            vec![b, c, oh, ow],
            out,
            &[self],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; b * c * h * w];
                for plane in 0..b * c {
                    for (oy, &(y0, y1)) in rows.iter().enumerate() {
                        for (ox, &(x0, x1)) in cols.iter().enumerate() {
                            let n = ((y1 - y0) * (x1 - x0)) as f64;
                            let gv = g[(plane * oh + oy) * ow + ox] / n;
                            for y in y0..y1 {
                                for v in &mut gi[(plane * h + y) * w + x0..(plane * h + y) * w + x1] {
                                    *v += gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(gi)]
            }),
        )
    }

    /// Bilinear resize with the align-corners-false convention.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let (b, c, h, w) = nchw("bilinear_resize", self)?;
        if out_h == 0 || out_w == 0 {
            return Err(invalid("bilinear_resize", format!("target size {out_h}x{out_w}")));
        }
        if (out_h, out_w) == (h, w) {
            return Tensor::from_op(
                "bilinear_resize",
                self.shape().to_vec(),
                self.data().to_vec(),
                &[self],
                Box::new(|g, _| vec![Some(g.to_vec())]),
            );
        }
        let ty = taps(h, out_h);
        let tx = taps(w, out_w);
        let src = self.data();
        let mut out = vec![0.0; b * c * out_h * out_w];
        for plane in 0..b * c {
            let img = &src[plane * h * w..(plane + 1) * h * w];
            for (oy, a) in ty.iter().enumerate() {
                for (ox, e) in tx.iter().enumerate() {
                    let top = img[a.lo * w + e.lo] * (1.0 - e.frac) + img[a.lo * w + e.hi] * e.frac;
                    let bot = img[a.hi * w + e.lo] * (1.0 - e.frac) + img[a.hi * w + e.hi] * e.frac;
                    out[(plane * out_h + oy) * out_w + ox] = top * (1.0 - a.frac) + bot * a.frac;
                }
            }
        }
        Tensor::from_op(
            "bilinear_resize",
            vec![b, c, out_h, out_w],
            out,
            &[self],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; b * c * h * w];
                for plane in 0..b * c {
                    let dst = &mut gi[plane * h * w..(plane + 1) * h * w];
                    for (oy, a) in ty.iter().enumerate() {
                        for (ox, e) in tx.iter().enumerate() {
                            let gv = g[(plane * out_h + oy) * out_w + ox];
                            dst[a.lo * w + e.lo] += gv * (1.0 - a.frac) * (1.0 - e.frac);
                            dst[a.lo * w + e.hi] += gv * (1.0 - a.frac) * e.frac;
                            dst[a.hi * w + e.lo] += gv * a.frac * (1.0 - e.frac);
                            dst[a.hi * w + e.hi] += gv * a.frac * e.frac;
                        }
                    }
                }
                vec![Some(gi)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_constants_and_identity() {
        let x = Tensor::full(&[1, 2, 5, 6], 1.75);
        for k in [1, 3, 5, 13] {
            let y = x.avg_pool2d(k, 1, k / 2).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|&v| (v - 1.75).abs() < 1e-12));
        }
        let r = Tensor::new(&[1, 1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(r.avg_pool2d(1, 1, 0).unwrap().data(), r.data());
    }

    #[test]
    fn pool_center_one_hot() {
        let mut img = vec![0.0; 25];
        img[12] = 1.0;
        let y = Tensor::new(&[1, 1, 5, 5], img).unwrap().avg_pool2d(3, 1, 1).unwrap();
        assert!((y.data()[12] - 1.0 / 9.0).abs() < 1e-7);
        // a corner window sees 4 cells
        let mut img = vec![0.0; 25];
        img[0] = 1.0;
        let y = Tensor::new(&[1, 1, 5, 5], img).unwrap().avg_pool2d(3, 1, 1).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-7);
    }

    #[test]
    fn resize_constant_and_same_size() {
        let x = Tensor::full(&[1, 1, 3, 3], -0.5);
        let y = x.bilinear_resize(7, 11).unwrap();
        assert!(y.data().iter().all(|&v| v == -0.5));
        let r = Tensor::new(&[1, 1, 2, 2], vec![0.1, 0.7, 0.3, 0.9]).unwrap();
        assert_eq!(r.bilinear_resize(2, 2).unwrap().data(), r.data());
        assert!(r.bilinear_resize(0, 3).is_err());
    }
}
