//! Soft Dice, logit-space cross-entropy and their weighted combination.
//!
//! Logits are `[N, C, H, W]`; targets are integer labels laid out as `[N, H, W]`.
//! With `C = 1` the task is binary (sigmoid, label 1 is foreground); otherwise
//! softmax over classes with class 0 as background.

use cafu_tensor::{Tensor, Var};

use crate::error::At;
use crate::{Error, Result};

pub const DICE_SMOOTH: f64 = 1.0;

fn check_target(logits: &Var, target: &[u8]) -> Result<[usize; 4]> {
    let dims = logits.dims4().at(|| "loss logits".into())?;
    let [n, c, h, w] = dims;
    if target.len() != n * h * w {
        return Err(Error::Numeric(format!(
            "target has {} labels for logits {:?}",
            target.len(),
            logits.shape()
        )));
    }
    let classes = c.max(2);
    if let Some(bad) = target.iter().find(|&&l| usize::from(l) >= classes) {
        return Err(Error::Numeric(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(dims)
}

/// Indicator tensor of `target` with the layout of `logits`. For a single
/// channel this is the foreground mask.
pub fn one_hot(target: &[u8], [n, c, h, w]: [usize; 4]) -> Tensor {
    let plane = h * w;
    let mut t = Tensor::zeros(&[n, c, h, w]);
    let data = t.data_mut();
    for (i, &label) in target.iter().enumerate() {
        let (b, p) = (i / plane, i % plane);
        let class = match (c, label) {
            (1, 1) => 0,
            (1, _) => continue,
            _ => usize::from(label),
        };
        data[(b * c + class) * plane + p] = 1.0;
    }
    t
}

fn probabilities(logits: &Var) -> Result<Var> {
    if logits.shape()[1] == 1 {
        Ok(logits.sigmoid())
    } else {
        Ok(logits.softmax(1)?)
    }
}

/// `1 − mean_c (2Σpy + s) / (Σp + Σy + s)` over foreground classes, pooled over the batch.
pub fn dice_loss(logits: &Var, target: &[u8], smooth: f64) -> Result<Var> {
    let dims = check_target(logits, target)?;
    let c = dims[1];
    let p = probabilities(logits)?;
    let y = Var::constant(one_hot(target, dims));
    let axes = [0, 2, 3];
    let inter = p.mul(&y)?.sum_axes(&axes)?;
    let denom = p.sum_axes(&axes)?.add(&y.sum_axes(&axes)?)?.add_scalar(smooth);
    let dice = inter.scale(2.0).add_scalar(smooth).div(&denom)?;
    let fg = if c == 1 { dice } else { dice.narrow(1, 1, c - 1)? };
    Ok(fg.mean_all().neg().add_scalar(1.0))
}

/// Mean binary cross-entropy (`C = 1`) or categorical cross-entropy over pixels.
pub fn bce_loss(logits: &Var, target: &[u8]) -> Result<Var> {
    let dims = check_target(logits, target)?;
    let [n, c, h, w] = dims;
    let y = Var::constant(one_hot(target, dims));
    let pixels = (n * h * w) as f64;
    if c == 1 {
        let per_pixel = logits.softplus().sub(&logits.mul(&y)?)?;
        Ok(per_pixel.mean_all())
    } else {
        Ok(logits.log_softmax(1)?.mul(&y)?.sum_all().scale(-1.0 / pixels))
    }
}

/// `α·dice + (1 − α)·bce`.
pub fn combined_loss(logits: &Var, target: &[u8], alpha: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("loss weight alpha must lie in [0, 1] (got {alpha})")));
    }
    let dice = dice_loss(logits, target, DICE_SMOOTH)?;
    let bce = bce_loss(logits, target)?;
    Ok(dice.scale(alpha).add(&bce.scale(1.0 - alpha))?)
}

/// Per-pixel argmax labels of `[N, C, H, W]` logits (threshold at 0 when `C = 1`).
pub fn argmax_labels(logits: &Tensor) -> Result<Vec<u8>> {
    let [n, c, h, w] = logits.dims4()?;
    let plane = h * w;
    let d = logits.data();
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        for p in 0..plane {
            let at = |k: usize| d[(b * c + k) * plane + p];
            let label = if c == 1 {
                u8::from(at(0) > 0.0)
            } else {
                (1..c).fold(0, |best, k| if at(k) > at(best) { k } else { best }) as u8
            };
            out.push(label);
        }
    }
    Ok(out)
}
