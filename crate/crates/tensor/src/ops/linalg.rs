use crate::error::{invalid, mismatch, Result};
use crate::tensor::Tensor;

/// `c = op(a) · op(b) + beta · c` for row-major buffers, where `op` optionally
/// transposes. `a` is logically `m × k`, `b` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths were checked against the logical extents and the
    // strides address exactly those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Matrix product. Supported forms:
    /// `[m,k]·[k,n]`, batched `[B,m,k]·[B,k,n]`, and `[...,k]·[k,n]`
    /// (a shared weight applied to the last axis).
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        match (sa.len(), sb.len()) {
            (r, 2) if r >= 2 => {
                let k = sa[r - 1];
                if sb[0] != k {
                    return Err(mismatch("matmul", sa, sb));
                }
                let m: usize = sa[..r - 1].iter().product();
                let n = sb[1];
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, self.data(), false, other.data(), false, &mut out, 0.0);
                let mut shape = sa[..r - 1].to_vec();
                shape.push(n);
                let (a, b) = (self.clone(), other.clone());
                Tensor::from_op(
                    "matmul",
                    shape,
                    out,
                    &[self, other],
                    Box::new(move |g, needs| {
                        let ga = needs[0].then(|| {
                            let mut ga = vec![0.0; m * k];
                            gemm(m, n, k, g, false, b.data(), true, &mut ga, 0.0);
                            ga
                        });
                        let gb = needs[1].then(|| {
                            let mut gb = vec![0.0; k * n];
                            gemm(k, m, n, a.data(), true, g, false, &mut gb, 0.0);
                            gb
                        });
                        vec![ga, gb]
                    }),
                )
            }
            (3, 3) => {
                let (bs, m, k) = (sa[0], sa[1], sa[2]);
                if sb[0] != bs || sb[1] != k {
                    return Err(mismatch("matmul", sa, sb));
                }
                let n = sb[2];
                let mut out = vec![0.0; bs * m * n];
                for i in 0..bs {
                    gemm(
                        m,
                        k,
                        n,
                        &self.data()[i * m * k..(i + 1) * m * k],
                        false,
                        &other.data()[i * k * n..(i + 1) * k * n],
                        false,
                        &mut out[i * m * n..(i + 1) * m * n],
                        0.0,
                    );
                }
                let (a, b) = (self.clone(), other.clone());
                Tensor::from_op(
                    "bmm",
                    vec![bs, m, n],
                    out,
                    &[self, other],
                    Box::new(move |g, needs| {
                        let ga = needs[0].then(|| {
                            let mut ga = vec![0.0; bs * m * k];
                            for i in 0..bs {
                                gemm(
                                    m,
                                    n,
                                    k,
                                    &g[i * m * n..(i + 1) * m * n],
                                    false,
                                    &b.data()[i * k * n..(i + 1) * k * n],
                                    true,
                                    &mut ga[i * m * k..(i + 1) * m * k],
                                    0.0,
                                );
                            }
                            ga
                        });
                        let gb = needs[1].then(|| {
                            let mut gb = vec![0.0; bs * k * n];
                            for i in 0..bs {
                                gemm(
                                    k,
                                    m,
                                    n,
                                    &a.data()[i * m * k..(i + 1) * m * k],
                                    true,
                                    &g[i * m * n..(i + 1) * m * n],
                                    false,
                                    &mut gb[i * k * n..(i + 1) * k * n],
                                    0.0,
                                );
                            }
                            gb
                        });
                        vec![ga, gb]
                    }),
                )
            }
            _ => Err(mismatch("matmul", sa, sb)),
        }
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        let cols = *self.shape().last().ok_or_else(|| invalid("softmax", "rank 0"))?;
        let mut data = self.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let y = data.clone();
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            data,
            &[self],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; g.len()];
                for ((gi, gr), yr) in gi.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &yv) in gi.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(gi)]
            }),
        )
    }
}

/// Scaled dot-product attention `softmax(q·kᵀ·scale)·v`, for `[m,d]` / `[n,d]`
/// / `[n,c]` operands or their batched `[B,·,·]` forms.
pub fn softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor, scale: f64) -> Result<Tensor> {
    if q.ndim() != k.ndim() || k.ndim() != v.ndim() || !(2..=3).contains(&q.ndim()) {
        return Err(mismatch("softmax_attention", q.shape(), k.shape()));
    }
    let r = q.ndim();
    if q.shape()[r - 1] != k.shape()[r - 1] {
        return Err(mismatch("softmax_attention", q.shape(), k.shape()));
    }
    if k.shape()[r - 2] != v.shape()[r - 2] {
        return Err(mismatch("softmax_attention", k.shape(), v.shape()));
    }
    q.matmul(&k.t()?)?.mul_scalar(scale)?.softmax()?.matmul(v)
}
