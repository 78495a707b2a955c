//! Pixelwise binary segmentation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts plus PPV, sensitivity and Dice.
///
/// Empty-denominator conventions: both masks empty gives 1 for all three
/// ratios; an empty prediction against a non-empty truth has PPV 0; a
/// non-empty prediction against an empty truth has sensitivity 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub ppv: f64,
    pub sen: f64,
    pub dsc: f64,
}

impl SegMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let both_empty = tp + fp == 0 && tp + fn_ == 0;
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                if both_empty {
                    1.0
                } else {
                    0.0
                }
            } else {
                num as f64 / den as f64
            }
        };
        Self {
            tp,
            fp,
            fn_,
            tn,
            ppv: ratio(tp, tp + fp),
            sen: ratio(tp, tp + fn_),
            dsc: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// How per-image metrics are combined over a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-image ratios.
    #[default]
    PerImage,
    /// Ratios recomputed from summed confusion counts.
    Pooled,
}

/// Dataset-level summary of PPV, sensitivity and Dice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dsc: f64,
    pub ppv: f64,
    pub sen: f64,
}

pub fn aggregate(per_image: &[SegMetrics], how: Aggregation) -> MetricSummary {
    if per_image.is_empty() {
        return MetricSummary::default();
    }
    match how {
        Aggregation::PerImage => {
            let n = per_image.len() as f64;
            MetricSummary {
                dsc: per_image.iter().map(|m| m.dsc).sum::<f64>() / n,
                ppv: per_image.iter().map(|m| m.ppv).sum::<f64>() / n,
                sen: per_image.iter().map(|m| m.sen).sum::<f64>() / n,
            }
        }
        Aggregation::Pooled => {
            let m = SegMetrics::from_counts(
                per_image.iter().map(|m| m.tp).sum(),
                per_image.iter().map(|m| m.fp).sum(),
                per_image.iter().map(|m| m.fn_).sum(),
                per_image.iter().map(|m| m.tn).sum(),
            );
            MetricSummary {
                dsc: m.dsc,
                ppv: m.ppv,
                sen: m.sen,
            }
        }
    }
}

/// Positive wherever `p >= threshold`.
pub fn binarize(prob: &[f32], threshold: f32) -> Vec<bool> {
    prob.iter().map(|&p| p >= threshold).collect()
}

pub fn compute_metrics(pred: &[bool], gt: &[bool]) -> Result<SegMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut counts = [0u64; 4];
    for (&p, &g) in pred.iter().zip(gt) {
        // index: bit1 = pred, bit0 = gt
        counts[((p as usize) << 1) | g as usize] += 1;
    }
    let [tn, fn_, fp, tp] = counts;
    Ok(SegMetrics::from_counts(tp, fp, fn_, tn))
}
