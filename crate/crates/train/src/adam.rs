//! Adam with bias correction.

use std::collections::HashMap;

use hrmedseg_core::ParamStore;
use hrmedseg_tensor::Tensor;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of the named parameters from their accumulated
    /// gradients. Parameters the backward pass did not reach are skipped.
    pub fn step(&mut self, store: &mut ParamStore, names: &[String], lr: f64) -> Result<()> {
        self.step_scaled(store, names, lr, 1.0)
    }

    /// Like [`Adam::step`] with every gradient multiplied by `grad_scale`.
    pub fn step_scaled(&mut self, store: &mut ParamStore, names: &[String], lr: f64, grad_scale: f64) -> Result<()> {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for name in names {
            let p = store.get(name)?;
            let Some(mut g) = p.grad() else { continue };
            if grad_scale != 1.0 {
                g.iter_mut().for_each(|v| *v *= grad_scale);
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let mut w = p.data().to_vec();
            for i in 0..w.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            let shape = p.shape().to_vec();
            store.replace(name, Tensor::param(&shape, w)?)?;
        }
        Ok(())
    }
}

/// Global L2 norm of the named gradients and the factor that brings it
/// down to `max_norm` (1 when already within).
pub fn clip_factor(store: &ParamStore, names: &[String], max_norm: f64) -> Result<(f64, f64)> {
    let mut sq = 0.0;
    for n in names {
        if let Some(g) = store.get(n)?.grad() {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    Ok((norm, if norm > max_norm { max_norm / norm } else { 1.0 }))
}
