use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, ScalarAdam, TrainConfig};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, binarize, compute_metrics, Aggregation, MetricSummary, SegMetrics};
use crate::model::{
    backward, forward, init_weights, masked_sq_error, seg_loss_grad, segment, transfer_encoder, ModelWeights,
    NetConfig,
};
use crate::patching::{apply_mask, ImageTensor, MaskFill, MaskPlan, PatchLabel, PatchOrdering};
use crate::rng;
use crate::schedule::{masked_count, masking_ratio, ScheduleParams};
use crate::selection::{select_patches, ClusterMethod};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Lesion-first ordering from patch clustering.
    #[default]
    Mps,
    /// Fresh uniformly random ordering per image and epoch.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub net: NetConfig,
    pub schedule: ScheduleParams,
    pub selection: SelectionMode,
    pub method: ClusterMethod,
    pub patch_size: usize,
    /// `token` fills masked pixels with a learned scalar starting at the
    /// given value.
    pub mask_fill: MaskFill,
    /// Compute each image's patch ordering once and reuse it; the ordering
    /// does not depend on the epoch, so results are unchanged.
    pub plan_cache: bool,
    pub train: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            schedule: ScheduleParams::default(),
            selection: SelectionMode::Mps,
            method: ClusterMethod::KMeans,
            patch_size: 8,
            mask_fill: MaskFill::default(),
            plan_cache: true,
            train: TrainConfig::default(),
        }
    }
}

/// One pretraining epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean over images of the summed squared error on masked pixels.
    pub loss: f64,
    /// Same error averaged per masked pixel value.
    pub loss_per_pixel: f64,
    pub sigma: f64,
    pub n: usize,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub weights: ModelWeights,
    pub curve: Vec<EpochStats>,
    /// Clustering runs performed (zero under random selection).
    pub clustering_calls: usize,
    /// Images whose clustering was degenerate and fell back to a random
    /// ordering.
    pub fallback_plans: usize,
    /// Final value of the learned mask token, if any.
    pub mask_token: Option<f32>,
}

pub fn pretrain(images: &[&ImageTensor], config: &PretrainConfig) -> Result<PretrainOutcome> {
    pretrain_with(images, config, |_, _| Ok(()))
}

fn random_ordering(grid: crate::patching::PatchGrid, seed: u64) -> Result<PatchOrdering> {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.shuffle(&mut rng::rng_from(seed));
    PatchOrdering::new(grid, order, vec![PatchLabel::Background; grid.len()])
}

/// Masked-image pretraining. `observer` sees the stats and weights after
/// every epoch (checkpointing, sweeps); an error from it aborts the run.
pub fn pretrain_with<F>(images: &[&ImageTensor], config: &PretrainConfig, mut observer: F) -> Result<PretrainOutcome>
where
    F: FnMut(&EpochStats, &ModelWeights) -> Result<()>,
{
    let tc = &config.train;
    tc.validate()?;
    config.schedule.validate()?;
    let net = &config.net;
    if net.out_channels != net.in_channels {
        return Err(Error::invalid("reconstruction network needs out_channels == in_channels"));
    }
    let first = images.first().ok_or_else(|| Error::invalid("pretraining needs at least one image"))?;
    let grid = first.grid(config.patch_size)?;
    for img in images {
        if img.shape() != first.shape() {
            return Err(Error::invalid("pretraining images must share one shape"));
        }
    }
    let (c, h, w) = first.shape();
    net.check_input(c, h, w)?;

    let mut weights: ModelWeights = init_weights(net, rng::derive_seed(tc.seed, "pretrain-init"))?;
    let mut opt = Adam::new(&weights, tc);
    let mut token = match config.mask_fill {
        MaskFill::Token(v) => Some(v),
        MaskFill::Constant(_) => None,
    };
    let mut token_opt = ScalarAdam::default();
    let mut cache: HashMap<usize, PatchOrdering> = HashMap::new();
    let mut clustering_calls = 0;
    let mut fallback_plans = 0;
    let mut curve = Vec::with_capacity(tc.epochs);
    let patch_pixels = (grid.patch_len()) as f64;

    for epoch in 0..tc.epochs {
        let sigma = masking_ratio(epoch + 1, &config.schedule)?;
        let n = masked_count(grid.len(), sigma)?;
        let lr = tc.lr_at(epoch);
        let mut perm: Vec<usize> = (0..images.len()).collect();
        perm.shuffle(&mut rng::rng_from(rng::derive_indexed(tc.seed, "pretrain-shuffle", epoch as u64)));
        let mut loss_sum = 0.0;

        for (b, batch) in perm.chunks(tc.batch_size).enumerate() {
            // Orderings: MPS ones depend only on the image, random ones on
            // image and epoch.
            let mut orderings = Vec::with_capacity(batch.len());
            let mut todo = Vec::new();
            for &i in batch {
                match config.selection {
                    SelectionMode::Random => {
                        let s = rng::derive_indexed(rng::derive_indexed(tc.seed, "random-plan", epoch as u64), "image", i as u64);
                        orderings.push(Some((random_ordering(grid, s)?, s)));
                    }
                    SelectionMode::Mps => match cache.get(&i) {
                        Some(o) => orderings.push(Some((o.clone(), rng::derive_indexed(tc.seed, "mps", i as u64)))),
                        None => {
                            todo.push(i);
                            orderings.push(None);
                        }
                    },
                }
            }
            if !todo.is_empty() {
                let computed: Vec<(usize, Result<PatchOrdering>, u64)> = todo
                    .par_iter()
                    .map(|&i| {
                        let s = rng::derive_indexed(tc.seed, "mps", i as u64);
                        (i, select_patches(images[i], config.patch_size, config.method, s), s)
                    })
                    .collect();
                for (i, res, s) in computed {
                    clustering_calls += 1;
                    let ordering = match res {
                        Ok(o) => o,
                        Err(Error::ClusteringDegenerate(why)) => {
                            log::debug!("image {i}: {why}; using a random ordering");
                            fallback_plans += 1;
                            random_ordering(grid, s)?
                        }
                        Err(e) => return Err(e),
                    };
                    if config.plan_cache {
                        cache.insert(i, ordering.clone());
                    }
                    let slot = batch.iter().position(|&j| j == i).expect("batch member");
                    orderings[slot] = Some((ordering, s));
                }
            }

            let fill = match token {
                Some(v) => MaskFill::Token(v),
                None => config.mask_fill,
            };
            let weights_ref = &weights;
            let results: Vec<(f64, Vec<Vec<f32>>, f64)> = batch
                .par_iter()
                .zip(orderings.into_par_iter())
                .map(|(&i, ord)| {
                    let (ordering, s) = ord.expect("ordering resolved");
                    let plan = MaskPlan::new(ordering, n, s)?;
                    let masked = apply_mask(images[i], &plan, fill)?;
                    let pixel_mask = plan.pixel_mask();
                    let (out, trace) = forward(weights_ref, masked.data(), h, w)?;
                    let (loss, d_out) = masked_sq_error(&out, images[i].data(), &pixel_mask);
                    let mut grads = weights_ref.zero_grads();
                    let d_in = backward(weights_ref, &trace, &d_out, &mut grads, token.is_some());
                    let token_grad = d_in.map_or(0.0, |g| {
                        g.iter()
                            .enumerate()
                            .filter(|(k, _)| pixel_mask[k % (h * w)])
                            .map(|(_, v)| *v as f64)
                            .sum()
                    });
                    Ok((loss as f64, grads, token_grad))
                })
                .collect::<Result<_>>()?;

            let scale = 1.0 / batch.len() as f32;
            let mut grads = weights.zero_grads();
            let (mut batch_loss, mut token_grad) = (0.0, 0.0);
            for (loss, g, tg) in &results {
                batch_loss += loss;
                token_grad += tg;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, v)| *a += v * scale);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    phase: "pretrain",
                    epoch: epoch + 1,
                    batch: b,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            opt.step(&mut weights, &grads, lr);
            if let Some(t) = token.as_mut() {
                token_opt.step(t, token_grad / batch.len() as f64, lr, tc);
            }
        }
        let loss = loss_sum / images.len() as f64;
        let denom = n as f64 * patch_pixels;
        let stats = EpochStats {
            epoch: epoch + 1,
            loss,
            loss_per_pixel: if denom > 0.0 { loss / denom } else { 0.0 },
            sigma,
            n,
            lr,
        };
        observer(&stats, &weights)?;
        curve.push(stats);
    }
    Ok(PretrainOutcome {
        weights,
        curve,
        clustering_calls,
        fallback_plans,
        mask_token: token,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub threshold: f32,
    pub aggregation: Aggregation,
    /// Keep the weights of the epoch with the best validation DSC instead
    /// of the last epoch.
    pub select_best: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            threshold: 0.5,
            aggregation: Aggregation::PerImage,
            select_best: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub val: Option<MetricSummary>,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub weights: ModelWeights,
    pub curve: Vec<FinetuneEpoch>,
    /// 1-based epoch whose weights were kept.
    pub kept_epoch: usize,
    pub transferred: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub summary: MetricSummary,
    pub per_image: Vec<SegMetrics>,
}

pub fn evaluate(weights: &ModelWeights, samples: &[&Sample], threshold: f32, how: Aggregation) -> Result<Evaluation> {
    let per_image = samples
        .par_iter()
        .map(|s| {
            let prob = segment(&s.image, weights)?;
            compute_metrics(&binarize(prob.data(), threshold), s.require_mask()?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        summary: aggregate(&per_image, how),
        per_image,
    })
}

/// Supervised segmentation training from randomly initialized weights.
pub fn finetune_from_scratch(labeled: &[&Sample], val: &[&Sample], config: &FinetuneConfig) -> Result<FinetuneOutcome> {
    finetune(labeled, val, None, config)
}

/// Initialize the segmentation network, copy the pretrained encoder into
/// it (when given), then train on BCE + soft Dice.
pub fn finetune(
    labeled: &[&Sample],
    val: &[&Sample],
    pretrained: Option<&ModelWeights>,
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    let tc = &config.train;
    tc.validate()?;
    if config.net.out_channels != 1 {
        return Err(Error::invalid("segmentation network needs out_channels == 1"));
    }
    let first = labeled.first().ok_or_else(|| Error::invalid("finetuning needs at least one labeled image"))?;
    let (c, h, w) = first.image.shape();
    config.net.check_input(c, h, w)?;
    let targets: Vec<Vec<f32>> = labeled
        .iter()
        .map(|s| {
            if s.image.shape() != (c, h, w) {
                return Err(Error::invalid("finetuning images must share one shape"));
            }
            Ok(s.require_mask()?.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
        })
        .collect::<Result<_>>()?;

    let init: ModelWeights = init_weights(&config.net, rng::derive_seed(tc.seed, "finetune-init"))?;
    let (mut weights, transferred) = match pretrained {
        Some(p) => {
            let t = transfer_encoder(p, &init)?;
            (t.weights, t.transferred)
        }
        None => (init, 0),
    };
    let mut opt = Adam::new(&weights, tc);
    let mut curve = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, ModelWeights)> = None;

    for epoch in 0..tc.epochs {
        let lr = tc.lr_at(epoch);
        let mut perm: Vec<usize> = (0..labeled.len()).collect();
        perm.shuffle(&mut rng::rng_from(rng::derive_indexed(tc.seed, "finetune-shuffle", epoch as u64)));
        let mut loss_sum = 0.0;
        for (b, batch) in perm.chunks(tc.batch_size).enumerate() {
            let weights_ref = &weights;
            let results: Vec<(f64, Vec<Vec<f32>>)> = batch
                .par_iter()
                .map(|&i| {
                    let (logits, trace) = forward(weights_ref, labeled[i].image.data(), h, w)?;
                    let (loss, d_out) = seg_loss_grad(&logits, &targets[i]);
                    let mut grads = weights_ref.zero_grads();
                    backward(weights_ref, &trace, &d_out, &mut grads, false);
                    Ok((loss as f64, grads))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f32;
            let mut grads = weights.zero_grads();
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, v)| *a += v * scale);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    phase: "finetune",
                    epoch: epoch + 1,
                    batch: b,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            opt.step(&mut weights, &grads, lr);
        }
        let val_summary = if val.is_empty() {
            None
        } else {
            Some(evaluate(&weights, val, config.threshold, config.aggregation)?.summary)
        };
        if let (true, Some(v)) = (config.select_best, &val_summary) {
            if best.as_ref().is_none_or(|(d, _, _)| v.dsc > *d) {
                best = Some((v.dsc, epoch + 1, weights.clone()));
            }
        }
        curve.push(FinetuneEpoch {
            epoch: epoch + 1,
            loss: loss_sum / labeled.len() as f64,
            lr,
            val: val_summary,
        });
    }
    let (weights, kept_epoch) = match best {
        Some((_, e, w)) => (w, e),
        None => (weights, tc.epochs),
    };
    Ok(FinetuneOutcome {
        weights,
        curve,
        kept_epoch,
        transferred,
    })
}

/// One row of a run's metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsLogRow {
    pub epoch: usize,
    pub phase: &'static str,
    pub loss: f64,
    pub dsc: Option<f64>,
    pub ppv: Option<f64>,
    pub sen: Option<f64>,
    pub sigma: Option<f64>,
    pub n: Option<usize>,
}

pub fn metrics_log(pretrain: &[EpochStats], finetune: &[FinetuneEpoch]) -> Vec<MetricsLogRow> {
    let pre = pretrain.iter().map(|e| MetricsLogRow {
        epoch: e.epoch,
        phase: "pretrain",
        loss: e.loss,
        dsc: None,
        ppv: None,
        sen: None,
        sigma: Some(e.sigma),
        n: Some(e.n),
    });
    let fine = finetune.iter().map(|e| MetricsLogRow {
        epoch: e.epoch,
        phase: "finetune",
        loss: e.loss,
        dsc: e.val.map(|v| v.dsc),
        ppv: e.val.map(|v| v.ppv),
        sen: e.val.map(|v| v.sen),
        sigma: None,
        n: None,
    });
    pre.chain(fine).collect()
}
