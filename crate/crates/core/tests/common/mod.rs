#![allow(dead_code)]

use hrmedseg_core::{Init, ModelConfig, ParamStore};
use hrmedseg_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "element {i}: {x} vs {y} (tol {tol})");
    }
}

/// Small config that exercises both block families.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        c1: 8,
        depth: 3,
        n_mbconv: 1,
        d: 4,
        patch_size: 4,
        expansion_ratio: 2,
        decoder_dim: 16,
        decoder_layers: 1,
        pool_kernels: vec![3],
        ..ModelConfig::toy()
    }
}

pub fn full_store(cfg: &ModelConfig) -> ParamStore {
    let mut s = ParamStore::new();
    let mut init = Init::new(cfg.seed);
    hrmedseg_core::encoder::init_encoder(cfg, &mut s, &mut init).unwrap();
    hrmedseg_core::decoder::init_neck(cfg, &mut s, &mut init).unwrap();
    hrmedseg_core::decoder::init_decoder(cfg, &mut s, &mut init).unwrap();
    s
}
