//! Central-difference gradient oracle.

use crate::error::Result;
use crate::precision::{precision, Precision};
use crate::tensor::Tensor;

/// Step used by [`check_gradients`] when none is given. 32-bit evaluation
/// needs a wider step so rounding noise stays below the truncation error.
pub fn default_step() -> f64 {
    match precision() {
        Precision::F32 => 1e-2,
        Precision::F64 => 1e-5,
    }
}

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every element `i`.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> Result<Tensor>, x: &Tensor, h: f64) -> Result<Tensor> {
    let base = x.data().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = f(&Tensor::new(x.shape(), plus)?)?.item();
        let fm = f(&Tensor::new(x.shape(), minus)?)?.item();
        // use the actually represented step (inputs are rounded in 32-bit mode)
        let xp = Tensor::new(&[1], vec![base[i] + h])?.item();
        let xm = Tensor::new(&[1], vec![base[i] - h])?.item();
        grad.push((fp - fm) / (xp - xm));
    }
    Tensor::new(x.shape(), grad)
}

/// Normwise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; falls back to the
/// absolute error when both are (numerically) zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Relative error per input, in input order.
    pub errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Compares backward-pass gradients of a scalar function against central
/// differences for every input.
pub fn check_gradients(f: impl Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor], h: Option<f64>) -> Result<GradCheck> {
    let h = h.unwrap_or_else(default_step);
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.with_grad()).collect();
    let loss = f(&leaves)?;
    loss.backward()?;
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let numeric = finite_diff_grad(
            |x| {
                let mut args: Vec<Tensor> = inputs.iter().map(|t| t.detach()).collect();
                args[i] = x.clone();
                f(&args)
            },
            &inputs[i],
            h,
        )?;
        errors.push(relative_error(&analytic, numeric.data()));
    }
    Ok(GradCheck { errors })
}
