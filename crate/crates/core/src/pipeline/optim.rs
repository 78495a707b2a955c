use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelWeights;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    #[default]
    WarmupCosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    /// `None` means 5% of the epochs, at least one.
    pub warmup_epochs: Option<usize>,
    /// Final learning rate as a fraction of the peak.
    pub min_lr_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
            batch_size: 8,
            epochs: 100,
            lr_schedule: LrSchedule::WarmupCosine,
            warmup_epochs: None,
            min_lr_ratio: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("train config: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decay rates must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("epsilon must be > 0 and weight_decay >= 0");
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return bad("min_lr_ratio must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn warmup(&self) -> usize {
        self.warmup_epochs
            .unwrap_or((self.epochs as f64 * 0.05).floor() as usize)
            .max(1)
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let peak = self.learning_rate;
        match self.lr_schedule {
            LrSchedule::Constant => peak,
            LrSchedule::WarmupCosine => {
                let w = self.warmup();
                if epoch < w {
                    return peak * (epoch + 1) as f64 / w as f64;
                }
                let floor = peak * self.min_lr_ratio;
                let span = self.epochs.saturating_sub(1 + w).max(1) as f64;
                let t = ((epoch - w) as f64 / span).min(1.0);
                floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Adaptive moment estimation with bias correction and coupled L2 decay.
#[derive(Clone, Debug)]
pub(crate) struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
}

impl Adam {
    pub(crate) fn new(weights: &ModelWeights, cfg: &TrainConfig) -> Self {
        Self {
            m: weights.zero_grads(),
            v: weights.zero_grads(),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            weight_decay: cfg.weight_decay,
        }
    }

    pub(crate) fn step(&mut self, weights: &mut ModelWeights, grads: &[Vec<f32>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.epsilon * c2.sqrt()) as f32;
        let wd = self.weight_decay as f32;
        for (i, g) in grads.iter().enumerate() {
            let w = weights.slot_mut(i);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                let gj = g[j] + wd * w[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                w[j] -= step * m[j] / (v[j].sqrt() + eps);
            }
        }
    }
}

/// Scalar Adam for a single trainable value.
#[derive(Clone, Debug, Default)]
pub(crate) struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    pub(crate) fn step(&mut self, value: &mut f32, grad: f64, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * grad;
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * grad * grad;
        let mh = self.m / (1.0 - cfg.beta1.powi(self.t));
        let vh = self.v / (1.0 - cfg.beta2.powi(self.t));
        *value -= (lr * mh / (vh.sqrt() + cfg.epsilon)) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_cosine_endpoints() {
        let cfg = TrainConfig {
            epochs: 100,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.warmup(), 5);
        assert!((cfg.lr_at(0) - 2e-4 / 5.0).abs() < 1e-18);
        assert!((cfg.lr_at(4) - 2e-4).abs() < 1e-18);
        assert!((cfg.lr_at(99) - 2e-6).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for e in 5..100 {
            let lr = cfg.lr_at(e);
            assert!(lr <= prev && lr >= 2e-6 - 1e-18);
            prev = lr;
        }
        let short = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        assert_eq!(short.warmup(), 1);
        assert!((short.lr_at(0) - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        use crate::model::{init_weights, NetConfig};
        let cfg = NetConfig {
            base_channels: 2,
            depth: 1,
            convs_per_stage: 1,
            ..NetConfig::default()
        };
        let mut w: ModelWeights = init_weights(&cfg, 0).unwrap();
        let before = w.clone();
        let tc = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = Adam::new(&w, &tc);
        let grads: Vec<Vec<f32>> = w.zero_grads().into_iter().map(|g| vec![0.5; g.len()]).collect();
        opt.step(&mut w, &grads, 1e-3);
        for ((_, a), (_, b)) in w.tensors().zip(before.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!(((y - x) - 1e-3).abs() < 1e-6);
            }
        }
    }
}
