#![allow(dead_code)]

use hrmedseg_core::ModelConfig;
use hrmedseg_train::TrainConfig;

/// A few-second training setup: 16² images, a narrow model, 4 epochs.
pub fn fast_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            c1: 8,
            depth: 2,
            n_mbconv: 1,
            d: 4,
            patch_size: 4,
            decoder_dim: 32,
            decoder_layers: 1,
            pool_kernels: vec![3],
            ..ModelConfig::toy()
        },
        lr: 2e-3,
        epochs: 4,
        distill_epochs: 4,
        batch_size: 4,
        image_size: 16,
        samples: 24,
        val_fraction: 0.25,
        ..TrainConfig::toy()
    }
}

/// `fast_config` with the 256-wide neck the teacher features require.
pub fn fast_distill_config() -> TrainConfig {
    let mut cfg = fast_config();
    cfg.model.decoder_dim = 256;
    cfg
}
