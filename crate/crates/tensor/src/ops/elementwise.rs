use crate::error::{mismatch, Result};
use crate::tensor::Tensor;

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `input` viewed through `out` (0 along broadcast axes).
fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides_of(input);
    let off = out.len() - input.len();
    (0..out.len())
        .map(|i| {
            if i < off || input[i - off] == 1 {
                0
            } else {
                own[i - off]
            }
        })
        .collect()
}

/// Visits every output offset with the matching offsets into both inputs.
pub(crate) fn for_each_pair(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = crate::tensor::numel_of(out);
    let nd = out.len();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[nd - 1];
    let (ia_step, ib_step) = (sa[nd - 1], sb[nd - 1]);
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut o = 0;
    while o < n {
        let (mut a, mut b) = (ia, ib);
        for _ in 0..inner {
            f(o, a, b);
            a += ia_step;
            b += ib_step;
            o += 1;
        }
        // carry into the outer axes
        let mut ax = nd - 1;
        loop {
            if ax == 0 {
                break;
            }
            ax -= 1;
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }

    #[inline]
    fn d_lhs(self, _a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add | BinOp::Sub => 1.0,
            BinOp::Mul => b,
            BinOp::Div => 1.0 / b,
        }
    }

    #[inline]
    fn d_rhs(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => 1.0,
            BinOp::Sub => -1.0,
            BinOp::Mul => a,
            BinOp::Div => -a / (b * b),
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, op: BinOp) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| mismatch(op.name(), a.shape(), b.shape()))?;
    let n = crate::tensor::numel_of(&out_shape);
    let same = a.shape() == b.shape();
    let mut data = vec![0.0; n];
    let (sa, sb) = (broadcast_strides(a.shape(), &out_shape), broadcast_strides(b.shape(), &out_shape));
    if same {
        for ((o, &x), &y) in data.iter_mut().zip(a.data()).zip(b.data()) {
            *o = op.apply(x, y);
        }
    } else {
        let (ad, bd) = (a.data(), b.data());
        for_each_pair(&out_shape, &sa, &sb, |o, i, j| data[o] = op.apply(ad[i], bd[j]));
    }
    let (ac, bc) = (a.clone(), b.clone());
    let shape_c = out_shape.clone();
    Tensor::from_op(
        op.name(),
        out_shape,
        data,
        &[a, b],
        Box::new(move |g, needs| {
            let (ad, bd) = (ac.data(), bc.data());
            let mut ga = needs[0].then(|| vec![0.0; ad.len()]);
            let mut gb = needs[1].then(|| vec![0.0; bd.len()]);
            if same {
                for o in 0..g.len() {
                    if let Some(ga) = ga.as_mut() {
                        ga[o] = g[o] * op.d_lhs(ad[o], bd[o]);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[o] = g[o] * op.d_rhs(ad[o], bd[o]);
                    }
                }
            } else {
                for_each_pair(&shape_c, &sa, &sb, |o, i, j| {
                    if let Some(ga) = ga.as_mut() {
                        ga[i] += g[o] * op.d_lhs(ad[i], bd[j]);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[j] += g[o] * op.d_rhs(ad[i], bd[j]);
                    }
                });
            }
            vec![ga, gb]
        }),
    )
}

/// Elementwise nonlinearities used across the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Silu,
    Sigmoid,
    /// `elu(x) + 1`, strictly positive; the linear-attention feature map.
    EluPlusOne,
    Relu,
}

#[inline]
pub fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn gelu_f(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

#[inline]
fn gelu_d(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_f(x),
            Activation::Silu => x * sigmoid_f(x),
            Activation::Sigmoid => sigmoid_f(x),
            // floored so the value stays positive after rounding to f32
            Activation::EluPlusOne => {
                if x > 0.0 {
                    x + 1.0
                } else {
                    x.exp().max(f32::MIN_POSITIVE as f64)
                }
            }
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_d(x),
            Activation::Silu => {
                let s = sigmoid_f(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid_f(x);
                s * (1.0 - s)
            }
            Activation::EluPlusOne => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Silu => "silu",
            Activation::Sigmoid => "sigmoid",
            Activation::EluPlusOne => "elu_plus_one",
            Activation::Relu => "relu",
        }
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Div)
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map_with_grad(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            &[self],
            Box::new(move |g, _| {
                vec![Some(
                    x.data().iter().zip(g).map(|(&v, &gv)| gv * df(v)).collect(),
                )]
            }),
        )
    }

    pub fn activation(&self, kind: Activation) -> Result<Tensor> {
        self.map_with_grad(kind.name(), move |x| kind.apply(x), move |x| kind.derivative(x))
    }

    pub fn gelu(&self) -> Result<Tensor> {
        self.activation(Activation::Gelu)
    }

    pub fn silu(&self) -> Result<Tensor> {
        self.activation(Activation::Silu)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.activation(Activation::Sigmoid)
    }

    pub fn elu_plus_one(&self) -> Result<Tensor> {
        self.activation(Activation::EluPlusOne)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.activation(Activation::Relu)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.map_with_grad("exp", f64::exp, f64::exp)
    }

    pub fn ln(&self) -> Result<Tensor> {
        self.map_with_grad("ln", f64::ln, |x| 1.0 / x)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.map_with_grad("square", |x| x * x, |x| 2.0 * x)
    }

    /// `x^p` for nonnegative `x`.
    pub fn powf(&self, p: f64) -> Result<Tensor> {
        self.map_with_grad(
            "powf",
            move |x| x.powf(p),
            move |x| if x == 0.0 && p >= 1.0 { if p == 1.0 { 1.0 } else { 0.0 } } else { p * x.powf(p - 1.0) },
        )
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        self.map_with_grad(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x| if x < lo || x > hi { 0.0 } else { 1.0 },
        )
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.mul_scalar(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.map_with_grad("add_scalar", move |x| x + c, |_| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Tensor> {
        self.map_with_grad("mul_scalar", move |x| x * c, move |_| c)
    }

    /// `c - x`.
    pub fn rsub_scalar(&self, c: f64) -> Result<Tensor> {
        self.map_with_grad("rsub_scalar", move |x| c - x, |_| -1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn broadcast_add_and_grad_reduction() {
        let a = Tensor::param(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::param(&[3], vec![10., 20., 30.]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.data(), &[11., 22., 33., 14., 25., 36.]);
        c.mul(&a).unwrap().sum().unwrap().backward().unwrap();
        // d/da (a+b)*a = 2a + b ; d/db = sum over rows of a
        assert_eq!(a.grad().unwrap(), vec![12., 24., 36., 18., 30., 42.]);
        assert_eq!(b.grad().unwrap(), vec![5., 7., 9.]);
    }

    #[test]
    fn middle_axis_broadcast() {
        let a = Tensor::new(&[2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let b = Tensor::new(&[2, 1, 2], vec![100., 200., 300., 400.]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.data(), &[100., 201., 102., 203., 304., 405., 306., 407.]);
    }

    #[test]
    fn activation_anchor_values() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Silu.apply(0.0), 0.0);
        assert_eq!(Activation::EluPlusOne.apply(0.0), 1.0);
        for x in [-1e300, -700.0, -50.0, -1.0, 0.0, 3.0, 1e6] {
            assert!(Activation::EluPlusOne.apply(x) as f32 > 0.0);
        }
        assert!((gelu_f(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn nan_is_an_error() {
        let x = Tensor::new(&[1], vec![-1.0]).unwrap();
        assert!(x.ln().is_err());
    }
}
