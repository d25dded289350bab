//! Segmentation fine-tuning, feature distillation and evaluation loops.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use hrmedseg_core::data::{self, gen_shapes_dataset, load_teacher_features, split_train_val, Sample, Teacher};
use hrmedseg_core::decoder::hard_labels;
use hrmedseg_core::losses::{dice_score, distill_mse, miou, seg_loss};
use hrmedseg_core::{Model, ParamStore};
use hrmedseg_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{clip_factor, Adam, AdamConfig};
use crate::config::TrainConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dice: Option<f64>,
    pub miou: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsHistory {
    /// Loss before the first update, when measured.
    pub initial_loss: Option<f64>,
    pub records: Vec<EpochRecord>,
}

impl MetricsHistory {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut s = String::from("epoch,loss,dice,miou,lr,seconds\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.8},{},{},{:e},{:.3}",
                r.epoch,
                r.loss,
                opt(r.dice),
                opt(r.miou),
                r.lr,
                r.seconds
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Records with wall-clock time removed, for reproducibility checks.
    pub fn without_timing(&self) -> Vec<EpochRecord> {
        self.records.iter().map(|r| EpochRecord { seconds: 0.0, ..r.clone() }).collect()
    }
}

/// Training and validation samples per the config: read from `data_dir`
/// or generated, then split with a seeded shuffle.
pub fn load_data(cfg: &TrainConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let samples = match &cfg.data_dir {
        Some(dir) => data::manifest::read_dataset(dir, cfg.model.c2)?,
        None => gen_shapes_dataset(cfg.samples, cfg.image_size, cfg.model.c2, cfg.data_seed)?,
    };
    Ok(split_train_val(samples, cfg.val_fraction, cfg.data_seed))
}

/// Stacks `[3,H,W]` images and `[C₂,H,W]` masks into batch tensors.
pub fn stack_batch(samples: &[&Sample]) -> Result<(Tensor, Tensor)> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&Tensor> = samples.iter().map(|s| &s.mask).collect();
    Ok((stack(&images)?, stack(&masks)?))
}

/// One of the 8 symmetries of the square applied to a `[C,H,W]` tensor
/// with `H == W`: bit 0 transposes, bit 1 flips columns, bit 2 flips rows.
pub fn dihedral(t: &Tensor, k: u8) -> Result<Tensor> {
    let [c, h, w] = *t.shape() else {
        return Err(Error::Config(format!("dihedral expects [C,H,W], got {:?}", t.shape())));
    };
    if h != w {
        return Err(Error::Config(format!("dihedral needs a square plane, got {h}x{w}")));
    }
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (mut sy, mut sx) = (y, x);
                if k & 4 != 0 {
                    sy = h - 1 - sy;
                }
                if k & 2 != 0 {
                    sx = w - 1 - sx;
                }
                if k & 1 != 0 {
                    (sy, sx) = (sx, sy);
                }
                out.push(src[(ch * h + sy) * w + sx]);
            }
        }
    }
    Ok(Tensor::new(t.shape(), out)?)
}

pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::Config(format!("batch items differ: {:?} vs {:?}", t.shape(), first.shape())));
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::new(&shape, data)?)
}

fn check_samples(cfg: &TrainConfig, samples: &[Sample]) -> Result<()> {
    for s in samples {
        let expected = [cfg.model.c2, cfg.image_size, cfg.image_size];
        if s.image.shape() != [3, cfg.image_size, cfg.image_size] || s.mask.shape() != expected {
            return Err(Error::Config(format!(
                "sample {} has image {:?} / mask {:?}, config expects 3x{n}x{n} / {expected:?}",
                s.id,
                s.image.shape(),
                s.mask.shape(),
                n = cfg.image_size
            )));
        }
    }
    Ok(())
}

/// Dataset-mean Dice and mIoU of hard-label predictions.
pub fn evaluate(model: &Model, samples: &[Sample], batch_size: usize) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty set".into()));
    }
    let c2 = model.config.c2;
    let (mut dice, mut iou) = (0.0, 0.0);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = stack_batch(&refs)?;
        let labels = hard_labels(&model.forward(&x)?.detach())?;
        for (pred, s) in labels.iter().zip(chunk) {
            let target = s.labels();
            dice += dice_score(pred, &target, c2);
            iou += miou(pred, &target, c2);
        }
    }
    let n = samples.len() as f64;
    Ok((dice / n, iou / n))
}

pub struct SegOutcome {
    pub history: MetricsHistory,
    /// Parameters after the last epoch.
    pub model: Model,
    /// Parameters of the epoch with the best validation Dice.
    pub best: ParamStore,
    pub best_dice: f64,
}

fn adam_for(cfg: &TrainConfig) -> Adam {
    Adam::new(AdamConfig {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    })
}

fn update(cfg: &TrainConfig, opt: &mut Adam, store: &mut ParamStore, names: &[String], lr: f64) -> Result<()> {
    let scale = match cfg.grad_clip {
        Some(c) => clip_factor(store, names, c)?.1,
        None => 1.0,
    };
    opt.step_scaled(store, names, lr, scale)?;
    store.zero_grads();
    Ok(())
}

/// Seeded mini-batch Adam on Dice + focal with per-epoch lr decay.
/// `on_epoch` sees each record as it is produced.
pub fn train_segmentation(
    cfg: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<SegOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    check_samples(cfg, train)?;
    check_samples(cfg, val)?;
    let mut model = Model::new(cfg.model.clone())?;
    let names = model.params.names();
    let mut opt = adam_for(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = MetricsHistory::default();
    let (mut best, mut best_dice) = (model.params.clone(), f64::NEG_INFINITY);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let (x, y) = if cfg.augment {
                let mut images = Vec::with_capacity(idx.len());
                let mut masks = Vec::with_capacity(idx.len());
                for &i in idx {
                    let k = rng.random_range(0..8u8);
                    images.push(dihedral(&train[i].image, k)?);
                    masks.push(dihedral(&train[i].mask, k)?);
                }
                (stack(&images.iter().collect::<Vec<_>>())?, stack(&masks.iter().collect::<Vec<_>>())?)
            } else {
                let refs: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
                stack_batch(&refs)?
            };
            let loss = seg_loss(&model.forward(&x)?, &y, &cfg.loss)?;
            loss.backward()?;
            total += loss.item() * idx.len() as f64;
            update(cfg, &mut opt, &mut model.params, &names, lr)?;
        }
        let (dice, iou) = if val.is_empty() {
            (None, None)
        } else {
            let (d, m) = evaluate(&model, val, cfg.batch_size)?;
            (Some(d), Some(m))
        };
        if let Some(d) = dice.filter(|&d| d > best_dice) {
            best_dice = d;
            best = model.params.clone();
        }
        let record = EpochRecord {
            epoch,
            loss: total / train.len() as f64,
            dice,
            miou: iou,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.records.push(record);
    }
    if val.is_empty() {
        best = model.params.clone();
    }
    if let Some(path) = &cfg.checkpoint {
        data::save_checkpoint(&best, path)?;
    }
    if let Some(path) = &cfg.metrics {
        history.write_csv(path)?;
    }
    Ok(SegOutcome {
        history,
        model,
        best,
        best_dice,
    })
}

/// The stand-in teacher for `cfg`, its grid matched to the student's patch
/// size.
pub fn teacher_for(cfg: &TrainConfig) -> Result<Teacher> {
    Ok(Teacher::with_stride(cfg.teacher_seed, cfg.model.patch_size)?)
}

/// Teacher features `[256,h,w]` for every sample, in sample order.
pub fn teacher_targets(teacher: &Teacher, samples: &[Sample], batch_size: usize) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = stack_batch(&refs)?;
        let f = teacher.features(&x)?;
        let per: usize = f.shape()[1..].iter().product();
        for i in 0..chunk.len() {
            out.push(Tensor::new(&f.shape()[1..], f.data()[i * per..(i + 1) * per].to_vec())?);
        }
    }
    Ok(out)
}

/// Writes teacher features in the checkpoint container, one tensor per
/// sample id.
pub fn dump_teacher_features(path: impl AsRef<Path>, samples: &[Sample], targets: &[Tensor]) -> Result<()> {
    data::write_tensors(path, samples.iter().map(|s| s.id.as_str()).zip(targets.iter()))?;
    Ok(())
}

/// Reads externally produced features and orders them like `samples`.
pub fn targets_from_file(path: impl AsRef<Path>, samples: &[Sample], cfg: &TrainConfig) -> Result<Vec<Tensor>> {
    let (gh, gw, _) = cfg.model.grid(cfg.image_size, cfg.image_size);
    let loaded: HashMap<String, Tensor> = load_teacher_features(path, &[cfg.model.decoder_dim, gh, gw])?
        .into_iter()
        .collect();
    samples
        .iter()
        .map(|s| {
            loaded
                .get(&s.id)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no teacher features for sample {}", s.id)))
        })
        .collect()
}

/// Mean distillation MSE over a dataset.
pub fn distill_eval(model: &Model, samples: &[Sample], targets: &[Tensor], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for (chunk, tchunk) in samples.chunks(batch_size.max(1)).zip(targets.chunks(batch_size.max(1))) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = stack_batch(&refs)?;
        let t: Vec<&Tensor> = tchunk.iter().collect();
        total += distill_mse(&model.student_features(&x)?.detach(), &stack(&t)?)?.item() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Feature distillation: only encoder and neck parameters move. Each
/// record's loss is the dataset MSE after that epoch's updates.
pub fn train_distill(
    cfg: &TrainConfig,
    model: &mut Model,
    samples: &[Sample],
    targets: &[Tensor],
    epochs: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<MetricsHistory> {
    cfg.validate()?;
    check_samples(cfg, samples)?;
    if samples.is_empty() || samples.len() != targets.len() {
        return Err(Error::Config(format!("{} samples but {} teacher targets", samples.len(), targets.len())));
    }
    let (gh, gw, _) = cfg.model.grid(cfg.image_size, cfg.image_size);
    let expected = [model.config.decoder_dim, gh, gw];
    if let Some(t) = targets.iter().find(|t| t.shape() != expected) {
        return Err(hrmedseg_core::Error::Shape {
            what: "teacher features vs neck output".into(),
            expected: expected.to_vec(),
            found: t.shape().to_vec(),
        }
        .into());
    }
    let names = model.distill_param_names();
    let mut opt = adam_for(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = MetricsHistory {
        initial_loss: Some(distill_eval(model, samples, targets, cfg.batch_size)?),
        records: Vec::new(),
    };
    for epoch in 0..epochs {
        let start = Instant::now();
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let (x, _) = stack_batch(&refs)?;
            let t: Vec<&Tensor> = idx.iter().map(|&i| &targets[i]).collect();
            let loss = distill_mse(&model.student_features(&x)?, &stack(&t)?)?;
            loss.backward()?;
            update(cfg, &mut opt, &mut model.params, &names, lr)?;
        }
        let record = EpochRecord {
            epoch,
            loss: distill_eval(model, samples, targets, cfg.batch_size)?,
            dice: None,
            miou: None,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.records.push(record);
    }
    Ok(history)
}
