//! Frozen stand-in distillation teacher: four 3×3 convolutions
//! `3 → 32 → 64 → 128 → 256` with GELU between them. By default all four
//! step by 2, giving a 256-channel map on the `H/16 × W/16` grid; a smaller
//! total stride keeps the last layers at stride 1 so the grid can match a
//! student with a smaller patch size.

use hrmedseg_tensor::Tensor;

use crate::error::{Error, Result};
use crate::params::Init;

pub const TEACHER_WIDTHS: [usize; 5] = [3, 32, 64, 128, 256];

#[derive(Debug, Clone)]
pub struct Teacher {
    pub seed: u64,
    stride: usize,
    layers: Vec<(Tensor, Tensor)>,
}

impl Teacher {
    pub fn new(seed: u64) -> Self {
        Self::with_stride(seed, 16).expect("16 is a valid stride")
    }

    /// Same weights as [`Teacher::new`] for `seed`; `stride` is the total
    /// downsampling factor, one of 1, 2, 4, 8, 16.
    pub fn with_stride(seed: u64, stride: usize) -> Result<Self> {
        if !matches!(stride, 1 | 2 | 4 | 8 | 16) {
            return Err(Error::Config(format!("teacher stride {stride} must be a power of two up to 16")));
        }
        let mut init = Init::new(seed);
        let layers = TEACHER_WIDTHS
            .windows(2)
            .map(|w| {
                let (cin, cout) = (w[0], w[1]);
                let weight = init.he(&[cout, cin, 3, 3], cin * 9).detach();
                let bias = init.normal(&[cout], 0.1).detach();
                (weight, bias)
            })
            .collect();
        Ok(Teacher { seed, stride, layers })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn out_channels(&self) -> usize {
        TEACHER_WIDTHS[4]
    }

    /// Features `[B,256,H/s,W/s]` of a `[B,3,H,W]` batch for stride `s`. The
    /// result is a constant: no gradient ever reaches the teacher.
    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        let [_, 3, h, w] = *images.shape() else {
            return Err(Error::Config(format!("teacher expects [B,3,H,W], got {:?}", images.shape())));
        };
        let s = self.stride;
        if h % s != 0 || w % s != 0 {
            return Err(Error::Config(format!("teacher input {h}x{w} must be divisible by {s}")));
        }
        let steps = s.trailing_zeros() as usize;
        let mut x = images.detach();
        for (i, (weight, bias)) in self.layers.iter().enumerate() {
            x = x.conv2d(weight, Some(bias), if i < steps { 2 } else { 1 }, 1, 1)?;
            if i + 1 < self.layers.len() {
                x = x.gelu()?;
            }
        }
        Ok(x)
    }
}
