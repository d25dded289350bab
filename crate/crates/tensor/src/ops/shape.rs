use crate::error::{invalid, mismatch, Result, TensorError};
use crate::ops::elementwise::{for_each_pair, strides_of};
use crate::tensor::{numel_of, Tensor};

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("cannot reshape {:?}", self.shape()),
            });
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            &[self],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(invalid("permute", format!("bad axes {axes:?} for rank {nd}")));
        }
        let in_strides = strides_of(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let zeros = vec![0; nd];
        let mut data = vec![0.0; self.numel()];
        let src = self.data();
        for_each_pair(&out_shape, &src_strides, &zeros, |o, i, _| data[o] = src[i]);
        let shape_c = out_shape.clone();
        Tensor::from_op(
            "permute",
            out_shape,
            data,
            &[self],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; g.len()];
                for_each_pair(&shape_c, &src_strides, &zeros, |o, i, _| gi[i] = g[o]);
                vec![Some(gi)]
            }),
        )
    }

    /// Swaps the last two axes.
    pub fn t(&self) -> Result<Tensor> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(invalid("t", "needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 1, nd - 2);
        self.permute(&axes)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(invalid("narrow", format!("axis {axis} [{start}, +{len}) out of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        let src = self.data();
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let n_in = self.numel();
        Tensor::from_op(
            "narrow",
            out_shape,
            data,
            &[self],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; n_in];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gi[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gi)]
            }),
        )
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(invalid("concat", format!("axis {axis} out of rank {nd}")));
        }
        for p in parts {
            let ok = p.ndim() == nd && (0..nd).all(|i| i == axis || p.shape()[i] == first.shape()[i]);
            if !ok {
                return Err(mismatch("concat", first.shape(), p.shape()));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::from_op(
            "concat",
            out_shape,
            data,
            &refs,
            Box::new(move |g, needs| {
                let mut grads: Vec<Option<Vec<f64>>> = lens
                    .iter()
                    .zip(needs)
                    .map(|(&l, &n)| n.then(|| Vec::with_capacity(outer * l * inner)))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gp, &l) in grads.iter_mut().zip(&lens) {
                        if let Some(gp) = gp {
                            gp.extend_from_slice(&g[off..off + l * inner]);
                        }
                        off += l * inner;
                    }
                }
                grads
            }),
        )
    }

    /// Broadcasts to `shape`; the backward pass sums over expanded axes.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::zeros(shape).add(self).and_then(|t| {
            if t.shape() == shape {
                Ok(t)
            } else {
                Err(mismatch("broadcast_to", self.shape(), shape))
            }
        })
    }
}
