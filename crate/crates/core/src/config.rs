//! Architectural hyperparameters.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Embedding channels C₁.
    pub c1: usize,
    /// Total encoder blocks L (MBConv + DGLA).
    pub depth: usize,
    /// Channel-interactive (MBConv) blocks; the rest are DGLA blocks.
    pub n_mbconv: usize,
    /// Attention projection dimension.
    pub d: usize,
    /// Patch size S.
    pub patch_size: usize,
    /// Hidden-width multiplier for MBConv and the DGLA MLP.
    pub expansion_ratio: usize,
    /// Number of predicted classes C₂.
    pub c2: usize,
    /// Width of the neck output, decoder queries and image tokens.
    pub decoder_dim: usize,
    /// Bidirectional cross-attention rounds.
    pub decoder_layers: usize,
    /// Average-pooling kernels of the multiscale module.
    pub pool_kernels: Vec<usize>,
    /// Attention heads. Only single-head attention is implemented.
    pub heads: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Full-size model: C₁ = 96, L = 10, ratio 2, 256-wide decoder.
    pub fn paper() -> Self {
        ModelConfig {
            c1: 96,
            depth: 10,
            n_mbconv: 2,
            d: 64,
            patch_size: 16,
            expansion_ratio: 2,
            c2: 1,
            decoder_dim: 256,
            decoder_layers: 2,
            pool_kernels: vec![5, 9, 13],
            heads: 1,
            seed: 0,
        }
    }

    /// CPU-sized profile used for tests and the toy training runs.
    pub fn toy() -> Self {
        ModelConfig {
            c1: 32,
            depth: 6,
            d: 32,
            ..Self::paper()
        }
    }

    pub fn n_dgla(&self) -> usize {
        self.depth.saturating_sub(self.n_mbconv)
    }

    /// Widths of the two upsampling transpose convolutions in the mask head.
    pub fn head_widths(&self) -> (usize, usize) {
        (self.decoder_dim / 4, self.decoder_dim / 8)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let extents = [
            ("c1", self.c1),
            ("depth", self.depth),
            ("d", self.d),
            ("patch_size", self.patch_size),
            ("expansion_ratio", self.expansion_ratio),
            ("c2", self.c2),
            ("decoder_dim", self.decoder_dim),
            ("heads", self.heads),
        ];
        for (name, v) in extents {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.n_mbconv > self.depth {
            return fail(format!("n_mbconv {} exceeds depth {}", self.n_mbconv, self.depth));
        }
        if self.heads != 1 {
            return fail("only single-head attention is supported".into());
        }
        if !self.decoder_dim.is_multiple_of(8) {
            return fail(format!("decoder_dim {} must be divisible by 8", self.decoder_dim));
        }
        if let Some(k) = self.pool_kernels.iter().find(|&&k| k % 2 == 0) {
            return fail(format!("pool kernel {k} must be odd"));
        }
        Ok(())
    }

    /// Checks that an input image size tiles into whole patches.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || !h.is_multiple_of(self.patch_size) || !w.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "input {h}x{w} is not divisible by patch size {}",
                self.patch_size
            )));
        }
        Ok(())
    }

    /// Token grid `(h/S, w/S)` and token count N = h·w/S².
    pub fn grid(&self, h: usize, w: usize) -> (usize, usize, usize) {
        let (gh, gw) = (h / self.patch_size, w / self.patch_size);
        (gh, gw, gh * gw)
    }
}
