//! Seeded shapes dataset: 1–3 anti-aliased ellipses, rectangles or rings
//! over a textured noise background.
//!
//! With one class every shape is foreground and the mask has a single
//! channel. With `C₂ > 1` channel 0 is background and each shape draws a
//! class from `1..C₂`; masks are one-hot across channels. Later shapes
//! occlude earlier ones. No augmentation is applied.

use hrmedseg_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sub-pixel grid used for coverage (`SS × SS` samples per pixel).
const SS: usize = 4;

/// Keeps the split shuffle independent of the generator streams.
const SPLIT_SALT: u64 = 0x5eed_0001;

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    /// `[3,H,W]` in `[0,1]`.
    pub image: Tensor,
    /// `[C₂,H,W]` in `{0,1}`.
    pub mask: Tensor,
}

impl Sample {
    /// Per-pixel class labels (0 = background).
    pub fn labels(&self) -> Vec<u32> {
        let (c2, hw) = (self.mask.shape()[0], self.mask.shape()[1] * self.mask.shape()[2]);
        let m = self.mask.data();
        (0..hw)
            .map(|i| {
                if c2 == 1 {
                    u32::from(m[i] > 0.5)
                } else {
                    (0..c2).find(|&c| m[c * hw + i] > 0.5).unwrap_or(0) as u32
                }
            })
            .collect()
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Ellipse,
    Rect,
    Ring { inner: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    kind: Kind,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    class: u32,
    color: [f64; 3],
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        match self.kind {
            Kind::Ellipse => u * u + v * v <= 1.0,
            Kind::Rect => u.abs() <= 1.0 && v.abs() <= 1.0,
            Kind::Ring { inner } => {
                let r2 = u * u + v * v;
                r2 <= 1.0 && r2 >= inner * inner
            }
        }
    }

    /// Fraction of sub-pixel samples inside the shape.
    fn coverage(&self, px: usize, py: usize) -> f64 {
        let mut hits = 0;
        for sy in 0..SS {
            for sx in 0..SS {
                let x = px as f64 + (sx as f64 + 0.5) / SS as f64;
                let y = py as f64 + (sy as f64 + 0.5) / SS as f64;
                hits += usize::from(self.contains(x, y));
            }
        }
        hits as f64 / (SS * SS) as f64
    }
}

fn random_shape(rng: &mut ChaCha8Rng, size: f64, c2: usize, bg: &[f64; 3]) -> Shape {
    let kind = match rng.random_range(0..3) {
        0 => Kind::Ellipse,
        1 => Kind::Rect,
        _ => Kind::Ring {
            inner: rng.random_range(0.4..0.6),
        },
    };
    let a = rng.random_range(0.15..0.3) * size;
    let b = a * rng.random_range(0.7..1.0);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let class = if c2 == 1 { 1 } else { rng.random_range(1..c2 as u32) };
    // push the shape color away from the background so every shape is visible
    let shift = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.3..0.5);
    let color = bg.map(|c| {
        let v = c + shift + rng.random_range(-0.1..0.1);
        if (0.0..=1.0).contains(&v) {
            v
        } else {
            c - shift
        }
    });
    Shape {
        kind,
        cx: rng.random_range(0.2..0.8) * size,
        cy: rng.random_range(0.2..0.8) * size,
        a,
        b,
        cos: theta.cos(),
        sin: theta.sin(),
        class,
        color,
    }
}

fn gen_sample(seed: u64, index: usize, size: usize, c2: usize) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let n = size * size;
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
    // low-frequency texture: a few random plane waves
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.02..0.06),
            )
        })
        .collect();
    let mut image = vec![0.0; 3 * n];
    for y in 0..size {
        for x in 0..size {
            let tex: f64 = waves.iter().map(|&(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph).sin()).sum();
            for c in 0..3 {
                image[c * n + y * size + x] = bg[c] + tex + rng.random_range(-0.05..0.05);
            }
        }
    }
    let count = rng.random_range(1..=3);
    let shapes: Vec<Shape> = (0..count).map(|_| random_shape(&mut rng, size as f64, c2, &bg)).collect();
    let mut labels = vec![0u32; n];
    for s in &shapes {
        for y in 0..size {
            for x in 0..size {
                let cov = s.coverage(x, y);
                if cov == 0.0 {
                    continue;
                }
                let i = y * size + x;
                for c in 0..3 {
                    let noise = rng.random_range(-0.03..0.03);
                    image[c * n + i] = (1.0 - cov) * image[c * n + i] + cov * (s.color[c] + noise);
                }
                if cov >= 0.5 {
                    labels[i] = s.class;
                }
            }
        }
    }
    for v in &mut image {
        *v = v.clamp(0.0, 1.0);
    }
    let mut mask = vec![0.0; c2 * n];
    for (i, &k) in labels.iter().enumerate() {
        if c2 == 1 {
            mask[i] = f64::from(k);
        } else {
            mask[k as usize * n + i] = 1.0;
        }
    }
    Ok(Sample {
        id: format!("s{seed}-{index:05}"),
        image: Tensor::new(&[3, size, size], image)?,
        mask: Tensor::new(&[c2, size, size], mask)?,
    })
}

/// `n` samples of `size × size` with `c2` mask channels. Sample `i` depends
/// only on `(seed, i, size, c2)`.
pub fn gen_shapes_dataset(n: usize, size: usize, c2: usize, seed: u64) -> Result<Vec<Sample>> {
    if size < 8 || c2 == 0 {
        return Err(Error::Config(format!("dataset needs size >= 8 and c2 >= 1, got {size} and {c2}")));
    }
    (0..n).map(|i| gen_sample(seed, i, size, c2)).collect()
}

/// Seeded shuffle, then the last `⌈val_fraction·n⌉` samples form the
/// validation set.
pub fn split_train_val(samples: Vec<Sample>, val_fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    use rand::seq::SliceRandom;
    let mut samples = samples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    samples.shuffle(&mut rng);
    let n_val = ((samples.len() as f64 * val_fraction).ceil() as usize).min(samples.len());
    let val = samples.split_off(samples.len() - n_val);
    (samples, val)
}
