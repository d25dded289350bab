use crate::error::{invalid, Result};
use crate::tensor::Tensor;

impl Tensor {
    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![1], vec![s], &[self], Box::new(move |g, _| vec![Some(vec![g[0]; n])]))
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.sum()?.mul_scalar(1.0 / n)
    }

    /// Sums along `axis`. With `keepdim` the axis stays with extent 1.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(invalid("sum_axis", format!("axis {axis} out of rank {}", shape.len())));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let mut data = vec![0.0; outer * inner];
        let src = self.data();
        for o in 0..outer {
            for a in 0..len {
                let row = &src[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let mut out_shape = shape.to_vec();
        if keepdim || shape.len() == 1 {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        Tensor::from_op(
            "sum_axis",
            out_shape,
            data,
            &[self],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        gi[(o * len + a) * inner..(o * len + a + 1) * inner]
                            .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gi)]
            }),
        )
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| invalid("mean_axis", format!("axis {axis} out of range")))?;
        self.sum_axis(axis, keepdim)?.mul_scalar(1.0 / len as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_axis_values_and_grad() {
        let x = Tensor::param(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s0 = x.sum_axis(0, false).unwrap();
        assert_eq!(s0.shape(), &[3]);
        assert_eq!(s0.data(), &[5., 7., 9.]);
        let s1 = x.sum_axis(1, true).unwrap();
        assert_eq!(s1.shape(), &[2, 1]);
        assert_eq!(s1.data(), &[6., 15.]);
        s1.mul(&Tensor::new(&[2, 1], vec![1., 2.]).unwrap())
            .unwrap()
            .sum()
            .unwrap()
            .backward()
            .unwrap();
        assert_eq!(x.grad().unwrap(), vec![1., 1., 1., 2., 2., 2.]);
    }
}
