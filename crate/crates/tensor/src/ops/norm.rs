use crate::error::{mismatch, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;

impl Tensor {
    /// LayerNorm over the last axis with affine `gamma`, `beta` of shape `[C]`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let c = *self.shape().last().unwrap_or(&0);
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(mismatch("layer_norm", self.shape(), gamma.shape()));
        }
        let rows = self.numel() / c;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        for (r, (xr, hr)) in self.data().chunks(c).zip(xhat.chunks_mut(c)).enumerate() {
            let mean = xr.iter().sum::<f64>() / c as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (h, &x) in hr.iter_mut().zip(xr) {
                *h = (x - mean) * is;
            }
        }
        let (gd, bd) = (gamma.data(), beta.data());
        let out: Vec<f64> = xhat
            .chunks(c)
            .flat_map(|hr| hr.iter().enumerate().map(move |(j, &h)| h * gd[j] + bd[j]))
            .collect();
        let g_c = gamma.clone();
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            &[self, gamma, beta],
            Box::new(move |g, needs| {
                let gd = g_c.data();
                let mut gx = needs[0].then(|| vec![0.0; g.len()]);
                let mut gg = needs[1].then(|| vec![0.0; c]);
                let mut gb = needs[2].then(|| vec![0.0; c]);
                for r in 0..rows {
                    let gr = &g[r * c..(r + 1) * c];
                    let hr = &xhat[r * c..(r + 1) * c];
                    if let Some(gg) = gg.as_mut() {
                        for j in 0..c {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                    if let Some(gb) = gb.as_mut() {
                        for j in 0..c {
                            gb[j] += gr[j];
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let dh = gr[j] * gd[j];
                            m1 += dh;
                            m2 += dh * hr[j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            gx[r * c + j] = inv_std[r] * (gr[j] * gd[j] - m1 - hr[j] * m2);
                        }
                    }
                }
                vec![gx, gg, gb]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_rows_have_beta_mean() {
        let x = Tensor::new(&[2, 4], vec![1., 2., 3., 4., -1., 0., 5., 9.]).unwrap();
        let g = Tensor::ones(&[4]);
        let b = Tensor::full(&[4], 0.5);
        let y = x.layer_norm(&g, &b, LAYER_NORM_EPS).unwrap();
        for row in y.data().chunks(4) {
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            assert!((m - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn already_normalized_row_is_unchanged() {
        let x = Tensor::new(&[1, 2], vec![-1.0, 1.0]).unwrap();
        let y = x.layer_norm(&Tensor::ones(&[2]), &Tensor::zeros(&[2]), LAYER_NORM_EPS).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
