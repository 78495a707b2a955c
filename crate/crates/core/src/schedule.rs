//! Adaptive masking ratio: `sigma(e) = sigma0 + ln(e) / tau`, capped at
//! `sigma_max`, with epochs counted from 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Adaptive,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    pub sigma0: f64,
    pub tau: f64,
    pub sigma_max: f64,
    pub mode: ScheduleMode,
    pub fixed_ratio: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            sigma0: 0.25,
            tau: 12.0,
            sigma_max: 0.95,
            mode: ScheduleMode::Adaptive,
            fixed_ratio: 0.75,
        }
    }
}

impl ScheduleParams {
    pub fn adaptive(sigma0: f64, tau: f64) -> Self {
        Self {
            sigma0,
            tau,
            ..Self::default()
        }
    }

    pub fn fixed(ratio: f64) -> Self {
        Self {
            mode: ScheduleMode::Fixed,
            fixed_ratio: ratio,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0 < self.sigma_max && self.sigma_max <= 1.0) {
            return Err(Error::invalid(format!(
                "schedule requires 0 < sigma0 < sigma_max <= 1 (sigma0 = {}, sigma_max = {})",
                self.sigma0, self.sigma_max
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.fixed_ratio) {
            return Err(Error::invalid(format!(
                "fixed_ratio must lie in [0, 1], got {}",
                self.fixed_ratio
            )));
        }
        Ok(())
    }
}

/// Masking ratio for a 1-based `epoch`.
pub fn masking_ratio(epoch: usize, params: &ScheduleParams) -> Result<f64> {
    if epoch < 1 {
        return Err(Error::invalid("epochs are 1-based; epoch 0 has no masking ratio"));
    }
    params.validate()?;
    Ok(match params.mode {
        ScheduleMode::Fixed => params.fixed_ratio,
        ScheduleMode::Adaptive => {
            (params.sigma0 + (epoch as f64).ln() / params.tau).min(params.sigma_max)
        }
    })
}

/// `n = floor(N * ratio)`, clamped into `[1, N - 1]` whenever `0 < ratio < 1`
/// so that both a masked and a visible patch always exist.
///
/// A product within floating-point rounding of an integer snaps to it, so a
/// ratio written as `0.29` floors `100 * 0.29` to 29 rather than 28.
pub fn masked_count(patch_count: usize, ratio: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("masking ratio {ratio} outside [0, 1]")));
    }
    let x = patch_count as f64 * ratio;
    let nearest = x.round();
    let n = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.floor()
    } as usize;
    if ratio > 0.0 && ratio < 1.0 && patch_count >= 2 {
        Ok(n.clamp(1, patch_count - 1))
    } else {
        Ok(n.min(patch_count))
    }
}
