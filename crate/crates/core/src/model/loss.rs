use super::float::Float;
use super::sigmoid;
use crate::error::{Error, Result};
use crate::patching::{ImageTensor, MaskPlan};

/// Masked reconstruction loss of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconLoss {
    /// Sum of squared differences over masked pixels; the optimized quantity.
    pub total: f64,
    /// Per-patch contribution, grid order; zero for visible patches.
    pub per_patch: Vec<f64>,
    /// `total` divided by the masked pixel count; for logging only.
    pub mean_per_masked_pixel: f64,
    /// Set when nothing is masked, so there is no training signal.
    pub no_signal: bool,
}

/// `Σ (y - x)^2` over pixels whose spatial mask is set (all channels), and
/// its gradient `2 (y - x)` there, zero elsewhere.
pub fn masked_sq_error<T: Float>(y: &[T], x: &[T], pixel_mask: &[bool]) -> (T, Vec<T>) {
    let hw = pixel_mask.len();
    let mut loss = T::ZERO;
    let mut grad = vec![T::ZERO; y.len()];
    for (i, (&a, &b)) in y.iter().zip(x).enumerate() {
        if pixel_mask[i % hw] {
            let d = a - b;
            loss += d * d;
            grad[i] = T::from_f64(2.0) * d;
        }
    }
    (loss, grad)
}

pub fn reconstruction_loss(reconstructed: &ImageTensor, original: &ImageTensor, plan: &MaskPlan) -> Result<ReconLoss> {
    if reconstructed.shape() != original.shape() {
        return Err(Error::invalid(format!(
            "reconstruction {:?} and original {:?} differ in shape",
            reconstructed.shape(),
            original.shape()
        )));
    }
    let grid = plan.grid();
    let (c, h, w) = original.shape();
    if grid.height() != h || grid.width() != w || grid.channels != c {
        return Err(Error::invalid("mask plan grid does not match the image"));
    }
    let masked = plan.patch_mask();
    let mut per_patch = vec![0.0; grid.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let p = grid.patch_of(y, x);
                if masked[p] {
                    let d = reconstructed.get(ch, y, x) as f64 - original.get(ch, y, x) as f64;
                    per_patch[p] += d * d;
                }
            }
        }
    }
    let total: f64 = per_patch.iter().sum();
    let pixels = plan.n() * grid.patch_len();
    if plan.n() == 0 {
        log::warn!("mask plan masks no patches; reconstruction loss carries no signal");
    }
    Ok(ReconLoss {
        total,
        per_patch,
        mean_per_masked_pixel: if pixels == 0 { 0.0 } else { total / pixels as f64 },
        no_signal: plan.n() == 0,
    })
}

const DICE_SMOOTH: f64 = 1.0;

/// Pixel-mean binary cross-entropy on logits plus soft Dice on the
/// sigmoid probabilities, equally weighted. Returns the loss and its
/// gradient w.r.t. the logits.
pub(crate) fn seg_loss_grad<T: Float>(logits: &[T], target: &[T]) -> (T, Vec<T>) {
    let n = T::from_f64(logits.len() as f64);
    let eps = T::from_f64(DICE_SMOOTH);
    let probs: Vec<T> = logits.iter().map(|&z| sigmoid(z)).collect();
    let mut bce = T::ZERO;
    let (mut inter, mut sum) = (T::ZERO, T::ZERO);
    for ((&z, &t), &p) in logits.iter().zip(target).zip(&probs) {
        // max(z, 0) - z t + ln(1 + e^{-|z|})
        let az = if z >= T::ZERO { z } else { -z };
        let relu = if z > T::ZERO { z } else { T::ZERO };
        bce += relu - z * t + (T::ONE + (-az).exp()).ln();
        inter += p * t;
        sum += p + t;
    }
    bce = bce / n;
    let two = T::from_f64(2.0);
    let denom = sum + eps;
    let dice = (two * inter + eps) / denom;
    let grad = logits
        .iter()
        .zip(target)
        .zip(&probs)
        .map(|((_, &t), &p)| {
            let d_bce = (p - t) / n;
            let d_dice_dp = (two * t * denom - (two * inter + eps)) / (denom * denom);
            d_bce - d_dice_dp * p * (T::ONE - p)
        })
        .collect();
    (bce + T::ONE - dice, grad)
}

/// Segmentation training loss for one image (BCE + soft Dice on logits).
pub fn seg_loss(logits: &[f32], target: &[f32]) -> f64 {
    seg_loss_grad(logits, target).0 as f64
}
