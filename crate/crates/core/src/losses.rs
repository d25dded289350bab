//! Segmentation and distillation objectives, and hard-label metrics.

use hrmedseg_tensor::Tensor;

use crate::error::{Error, Result};

/// Probability clamp used by the focal loss.
pub const FOCAL_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_dice: f64,
    pub w_focal: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub dice_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_dice: 1.0,
            w_focal: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            dice_smooth: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_dice, self.w_focal, self.focal_alpha, self.focal_gamma, self.dice_smooth];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be nonnegative: {self:?}")));
        }
        if self.w_dice + self.w_focal <= 0.0 {
            return Err(Error::Config("w_dice + w_focal must be positive".into()));
        }
        Ok(())
    }
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            what: what.to_string(),
            expected: b.shape().to_vec(),
            found: a.shape().to_vec(),
        });
    }
    Ok(())
}

/// Soft Dice loss `1 − (2Σpt + s)/(Σp + Σt + s)`, computed per (sample,
/// class) plane of a `[B,C,...]` tensor and averaged.
pub fn dice_loss(pred: &Tensor, target: &Tensor, smooth: f64) -> Result<Tensor> {
    same_shape("dice_loss", pred, target)?;
    let planes = match pred.shape() {
        [b, c, ..] if pred.ndim() > 2 => b * c,
        _ => 1,
    };
    let per = pred.numel() / planes;
    let p = pred.reshape(&[planes, per])?;
    let t = target.reshape(&[planes, per])?;
    let inter = p.mul(&t)?.sum_axis(1, false)?;
    let denom = p.sum_axis(1, false)?.add(&t.sum_axis(1, false)?)?.add_scalar(smooth)?;
    let ratio = inter.mul_scalar(2.0)?.add_scalar(smooth)?.div(&denom)?;
    Ok(ratio.rsub_scalar(1.0)?.mean()?)
}

/// Focal loss `mean(−α (1−p_t)^γ ln p_t)` with `p` clamped to `[ε, 1−ε]`.
pub fn focal_loss(pred: &Tensor, target: &Tensor, alpha: f64, gamma: f64) -> Result<Tensor> {
    same_shape("focal_loss", pred, target)?;
    let p = pred.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS)?;
    // p_t = p·y + (1−p)(1−y)
    let pt = p.mul(target)?.add(&p.rsub_scalar(1.0)?.mul(&target.rsub_scalar(1.0)?)?)?;
    let modulating = pt.rsub_scalar(1.0)?.powf(gamma)?;
    Ok(modulating.mul(&pt.ln()?)?.mean()?.mul_scalar(-alpha)?)
}

/// Weighted Dice + focal objective.
pub fn seg_loss(pred: &Tensor, target: &Tensor, w: &LossWeights) -> Result<Tensor> {
    let dice = dice_loss(pred, target, w.dice_smooth)?;
    let focal = focal_loss(pred, target, w.focal_alpha, w.focal_gamma)?;
    match (w.w_dice == 0.0, w.w_focal == 0.0) {
        (false, true) if w.w_dice == 1.0 => Ok(dice),
        (true, false) if w.w_focal == 1.0 => Ok(focal),
        _ => Ok(dice.mul_scalar(w.w_dice)?.add(&focal.mul_scalar(w.w_focal)?)?),
    }
}

/// Mean squared error between student and teacher feature maps.
pub fn distill_mse(student: &Tensor, teacher: &Tensor) -> Result<Tensor> {
    same_shape("distill_mse", student, teacher)?;
    Ok(student.sub(teacher)?.square()?.mean()?)
}

fn foreground_classes(num_classes: usize) -> std::ops::Range<u32> {
    if num_classes <= 1 {
        1..2
    } else {
        1..num_classes as u32
    }
}

/// Dice over foreground classes of two hard-label maps. Binary maps
/// (`num_classes == 1`) use label 1 as foreground; multi-class maps treat
/// label 0 as background. Classes absent from both maps are skipped; if no
/// class is present at all the score is 1.
pub fn dice_score(pred: &[u32], target: &[u32], num_classes: usize) -> f64 {
    class_mean(pred, target, num_classes, |inter, p, t, _| 2.0 * inter / (p + t))
}

/// Mean intersection-over-union over foreground classes, same conventions
/// as [`dice_score`].
pub fn miou(pred: &[u32], target: &[u32], num_classes: usize) -> f64 {
    class_mean(pred, target, num_classes, |inter, _, _, union| inter / union)
}

fn class_mean(pred: &[u32], target: &[u32], num_classes: usize, score: impl Fn(f64, f64, f64, f64) -> f64) -> f64 {
    assert_eq!(pred.len(), target.len(), "label maps differ in size");
    let mut total = 0.0;
    let mut count = 0;
    for c in foreground_classes(num_classes) {
        let (mut inter, mut p, mut t) = (0usize, 0usize, 0usize);
        for (&a, &b) in pred.iter().zip(target) {
            let (ia, ib) = (a == c, b == c);
            inter += usize::from(ia && ib);
            p += usize::from(ia);
            t += usize::from(ib);
        }
        if p + t == 0 {
            continue;
        }
        let union = (p + t - inter) as f64;
        total += score(inter as f64, p as f64, t as f64, union);
        count += 1;
    }
    if count == 0 {
        1.0
    } else {
        total / count as f64
    }
}
