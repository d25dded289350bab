//! Training configuration and the flat `key = value` file format.
//!
//! One assignment per line, `#` starts a comment, lists are
//! comma-separated. `profile` is applied first wherever it appears, then
//! the remaining keys in order. Unknown keys are errors.

use std::path::{Path, PathBuf};

use hrmedseg_core::losses::LossWeights;
use hrmedseg_core::ModelConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Toy,
    Paper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub profile: Profile,
    pub model: ModelConfig,
    pub lr: f64,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub distill_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global-norm gradient clip; off unless set.
    pub grad_clip: Option<f64>,
    /// Random flips and quarter turns of each training sample.
    pub augment: bool,
    pub image_size: usize,
    pub samples: usize,
    pub val_fraction: f64,
    pub loss: LossWeights,
    /// Shuffle seed; the model uses `model.seed`.
    pub seed: u64,
    pub data_seed: u64,
    pub teacher_seed: u64,
    pub data_dir: Option<PathBuf>,
    pub teacher_features: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl TrainConfig {
    /// Optimizer recipe at full scale: Adam, lr 1e-4 decayed by 0.98 per
    /// epoch, batch 16, 200 epochs, 1024² inputs.
    pub fn paper() -> Self {
        TrainConfig {
            profile: Profile::Paper,
            model: ModelConfig::paper(),
            lr: 1e-4,
            decay_factor: 0.98,
            batch_size: 16,
            epochs: 200,
            distill_epochs: 20,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            augment: true,
            image_size: 1024,
            samples: 200,
            val_fraction: 0.1,
            loss: LossWeights::default(),
            seed: 0,
            data_seed: 0,
            teacher_seed: 7,
            data_dir: None,
            teacher_features: None,
            checkpoint: None,
            metrics: None,
        }
    }

    /// CPU-sized profile: 64² images, the toy model with 8-pixel patches and
    /// one decoder layer, 50 epochs.
    pub fn toy() -> Self {
        TrainConfig {
            profile: Profile::Toy,
            model: ModelConfig {
                patch_size: 8,
                decoder_layers: 1,
                pool_kernels: vec![3],
                ..ModelConfig::toy()
            },
            lr: 4e-4,
            epochs: 50,
            image_size: 64,
            ..Self::paper()
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Toy => Self::toy(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Learning rate during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay_factor.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return fail("decay_factor must be in (0, 1]");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail("val_fraction must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return fail("adam betas must be in [0, 1) and eps positive");
        }
        if self.grad_clip.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return fail("grad_clip must be positive");
        }
        self.model.validate()?;
        self.loss.validate()?;
        self.model.check_input(self.image_size, self.image_size)?;
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: String| Error::Config(format!("{key}: {e}"));
        macro_rules! parse {
            () => {
                value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
            };
        }
        macro_rules! parse_f {
            () => {
                value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
            };
        }
        let path = || Some(PathBuf::from(value));
        match key {
            "profile" => {
                let p = match value {
                    "toy" => Profile::Toy,
                    "paper" => Profile::Paper,
                    _ => return Err(bad(format!("unknown profile `{value}`"))),
                };
                *self = Self::for_profile(p);
            }
            "lr" => self.lr = parse_f!(),
            "decay_factor" => self.decay_factor = parse_f!(),
            "batch_size" => self.batch_size = parse!(),
            "epochs" => self.epochs = parse!(),
            "distill_epochs" => self.distill_epochs = parse!(),
            "adam_beta1" => self.adam_beta1 = parse_f!(),
            "adam_beta2" => self.adam_beta2 = parse_f!(),
            "adam_eps" => self.adam_eps = parse_f!(),
            "grad_clip" => self.grad_clip = if value == "none" { None } else { Some(parse_f!()) },
            "augment" => {
                self.augment = match value {
                    "true" | "on" | "1" => true,
                    "false" | "off" | "0" => false,
                    _ => return Err(bad(format!("expected on/off, got `{value}`"))),
                }
            }
            "image_size" => self.image_size = parse!(),
            "samples" => self.samples = parse!(),
            "val_fraction" => self.val_fraction = parse_f!(),
            "seed" => self.seed = parse!(),
            "data_seed" => self.data_seed = parse!(),
            "teacher_seed" => self.teacher_seed = parse!(),
            "model_seed" => self.model.seed = parse!(),
            "w_dice" => self.loss.w_dice = parse_f!(),
            "w_focal" => self.loss.w_focal = parse_f!(),
            "focal_alpha" => self.loss.focal_alpha = parse_f!(),
            "focal_gamma" => self.loss.focal_gamma = parse_f!(),
            "dice_smooth" => self.loss.dice_smooth = parse_f!(),
            "c1" => self.model.c1 = parse!(),
            "depth" => self.model.depth = parse!(),
            "n_mbconv" => self.model.n_mbconv = parse!(),
            "d" => self.model.d = parse!(),
            "patch_size" => self.model.patch_size = parse!(),
            "expansion_ratio" => self.model.expansion_ratio = parse!(),
            "c2" => self.model.c2 = parse!(),
            "decoder_dim" => self.model.decoder_dim = parse!(),
            "decoder_layers" => self.model.decoder_layers = parse!(),
            "heads" => self.model.heads = parse!(),
            "pool_kernels" => {
                self.model.pool_kernels = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string())))
                    .collect::<Result<_>>()?
            }
            "data_dir" => self.data_dir = path(),
            "teacher_features" => self.teacher_features = path(),
            "checkpoint" => self.checkpoint = path(),
            "metrics" => self.metrics = path(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies assignments, the profile first.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs.iter().filter(|(k, _)| k == "profile") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "profile") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply(&parse_pairs(&text)?)?;
        Ok(cfg)
    }
}

/// Splits config text into `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`", i + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a single `key=value` override.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{s}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
