use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{evaluate, finetune, metrics_log, pretrain_with, FinetuneConfig, MetricsLogRow, PretrainConfig, SelectionMode};
use super::{split_dataset, SplitSpec};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::MetricSummary;
use crate::model::ModelWeights;
use crate::patching::ImageTensor;
use crate::report;
use crate::schedule::ScheduleMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "base+AMS")]
    BaseAms,
    #[serde(rename = "base+MPS")]
    BaseMps,
    #[serde(rename = "base+AMS+MPS")]
    Full,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Base, Arm::BaseAms, Arm::BaseMps, Arm::Full];

    pub fn label(&self) -> &'static str {
        match self {
            Arm::Base => "base",
            Arm::BaseAms => "base+AMS",
            Arm::BaseMps => "base+MPS",
            Arm::Full => "base+AMS+MPS",
        }
    }

    pub fn selection(&self) -> SelectionMode {
        match self {
            Arm::Base | Arm::BaseAms => SelectionMode::Random,
            Arm::BaseMps | Arm::Full => SelectionMode::Mps,
        }
    }

    pub fn schedule_mode(&self) -> ScheduleMode {
        match self {
            Arm::Base | Arm::BaseMps => ScheduleMode::Fixed,
            Arm::BaseAms | Arm::Full => ScheduleMode::Adaptive,
        }
    }

    /// Published test DSC on the 5%-labeled ultrasound benchmark, shown
    /// next to the synthetic results for orientation only.
    pub fn reference_dsc(&self) -> Option<f64> {
        match self {
            Arm::Base => Some(0.4584),
            Arm::Full => Some(0.5002),
            _ => None,
        }
    }

    /// The pretraining config of this arm: `base` settings with the arm's
    /// selection mode and schedule mode swapped in.
    pub fn pretrain_config(&self, base: &PretrainConfig) -> PretrainConfig {
        let mut cfg = base.clone();
        cfg.selection = self.selection();
        cfg.schedule.mode = self.schedule_mode();
        cfg
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub split: SplitSpec,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            seeds: vec![0],
            arms: Arm::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Test-split metrics; `None` when the run failed.
    pub test: Option<MetricSummary>,
    pub error: Option<String>,
    pub clustering_calls: usize,
    pub fallback_plans: usize,
    pub masked_counts: Vec<usize>,
    pub log: Vec<MetricsLogRow>,
}

#[derive(Clone, Debug)]
pub struct ArmReport {
    pub arm: Arm,
    pub seeds: Vec<SeedOutcome>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl ArmReport {
    fn completed(&self) -> Vec<MetricSummary> {
        self.seeds.iter().filter_map(|s| s.test).collect()
    }

    /// Mean over completed seeds.
    pub fn mean(&self) -> Option<MetricSummary> {
        self.stats().map(|(m, _)| m)
    }

    /// Sample standard deviation over completed seeds (0 for one seed).
    pub fn std(&self) -> Option<MetricSummary> {
        self.stats().map(|(_, s)| s)
    }

    fn stats(&self) -> Option<(MetricSummary, MetricSummary)> {
        let done = self.completed();
        if done.is_empty() {
            return None;
        }
        let pick = |f: fn(&MetricSummary) -> f64| mean_std(&done.iter().map(f).collect::<Vec<_>>());
        let (d, ds) = pick(|m| m.dsc);
        let (p, ps) = pick(|m| m.ppv);
        let (s, ss) = pick(|m| m.sen);
        Some((
            MetricSummary { dsc: d, ppv: p, sen: s },
            MetricSummary { dsc: ds, ppv: ps, sen: ss },
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub arm: &'static str,
    pub seeds_completed: usize,
    pub dsc_mean: Option<f64>,
    pub dsc_std: Option<f64>,
    pub ppv_mean: Option<f64>,
    pub ppv_std: Option<f64>,
    pub sen_mean: Option<f64>,
    pub sen_std: Option<f64>,
    pub reference_dsc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationSeedRow {
    pub arm: &'static str,
    pub seed: u64,
    pub dsc: Option<f64>,
    pub ppv: Option<f64>,
    pub sen: Option<f64>,
    pub clustering_calls: usize,
    pub fallback_plans: usize,
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub arms: Vec<ArmReport>,
}

impl AblationReport {
    pub fn arm(&self, arm: Arm) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn mean_dsc(&self, arm: Arm) -> Option<f64> {
        self.arm(arm).and_then(|a| a.mean()).map(|m| m.dsc)
    }

    pub fn rows(&self) -> Vec<AblationRow> {
        self.arms
            .iter()
            .map(|a| {
                let (m, s) = (a.mean(), a.std());
                AblationRow {
                    arm: a.arm.label(),
                    seeds_completed: a.completed().len(),
                    dsc_mean: m.map(|v| v.dsc),
                    dsc_std: s.map(|v| v.dsc),
                    ppv_mean: m.map(|v| v.ppv),
                    ppv_std: s.map(|v| v.ppv),
                    sen_mean: m.map(|v| v.sen),
                    sen_std: s.map(|v| v.sen),
                    reference_dsc: a.arm.reference_dsc(),
                }
            })
            .collect()
    }

    pub fn seed_rows(&self) -> Vec<AblationSeedRow> {
        self.arms
            .iter()
            .flat_map(|a| {
                a.seeds.iter().map(move |s| AblationSeedRow {
                    arm: a.arm.label(),
                    seed: s.seed,
                    dsc: s.test.map(|m| m.dsc),
                    ppv: s.test.map(|m| m.ppv),
                    sen: s.test.map(|m| m.sen),
                    clustering_calls: s.clustering_calls,
                    fallback_plans: s.fallback_plans,
                    status: s.error.clone().unwrap_or_else(|| "ok".into()),
                })
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        report::write_csv(path, config_hash, &self.rows())
    }

    pub fn write_seed_csv(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        report::write_csv(path, config_hash, &self.seed_rows())
    }

    /// Fixed-width text table; `reference` is the published DSC.
    pub fn to_table(&self) -> String {
        let fmt = |m: Option<f64>, s: Option<f64>| match (m, s) {
            (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
            _ => "failed".into(),
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>5}  {:>17}  {:>17}  {:>17}  {:>9}",
            "arm", "seeds", "DSC", "PPV", "Sen", "reference"
        );
        for r in self.rows() {
            let _ = writeln!(
                out,
                "{:<14} {:>5}  {:>17}  {:>17}  {:>17}  {:>9}",
                r.arm,
                r.seeds_completed,
                fmt(r.dsc_mean, r.dsc_std),
                fmt(r.ppv_mean, r.ppv_std),
                fmt(r.sen_mean, r.sen_std),
                r.reference_dsc.map_or("-".into(), |v| format!("{v:.4}")),
            );
        }
        out
    }
}

struct Parts<'a> {
    pretrain: Vec<&'a ImageTensor>,
    labeled: Vec<&'a Sample>,
    val: Vec<&'a Sample>,
    test: Vec<&'a Sample>,
}

fn parts<'a>(samples: &'a [Sample], spec: &SplitSpec) -> Result<Parts<'a>> {
    let split = split_dataset(samples.len(), spec)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>();
    Ok(Parts {
        // labeled and unlabeled train images alike; labels are unused here
        pretrain: split.train.iter().map(|&i| &samples[i].image).collect(),
        labeled: pick(&split.labeled),
        val: pick(&split.val),
        test: pick(&split.test),
    })
}

fn run_seed(parts: &Parts<'_>, pre: &PretrainConfig, fine: &FinetuneConfig, seed: u64) -> Result<SeedOutcome> {
    let mut pre = pre.clone();
    pre.train.seed = seed;
    let mut fine = fine.clone();
    fine.train.seed = seed;
    let p = pretrain_with(&parts.pretrain, &pre, |_, _| Ok(()))?;
    let f = finetune(&parts.labeled, &parts.val, Some(&p.weights), &fine)?;
    let test = evaluate(&f.weights, &parts.test, fine.threshold, fine.aggregation)?;
    Ok(SeedOutcome {
        seed,
        test: Some(test.summary),
        error: None,
        clustering_calls: p.clustering_calls,
        fallback_plans: p.fallback_plans,
        masked_counts: p.curve.iter().map(|e| e.n).collect(),
        log: metrics_log(&p.curve, &f.curve),
    })
}

/// Pretrain then finetune every arm on every seed and score the test
/// split. The split is the same for all seeds and arms; within a seed all
/// arms share initializations and data order. A failing run is recorded
/// in its arm and the remaining runs continue.
pub fn ablate(samples: &[Sample], config: &AblationConfig) -> Result<AblationReport> {
    if config.seeds.is_empty() || config.arms.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed and one arm"));
    }
    let parts = parts(samples, &config.split)?;
    let mut arms = Vec::with_capacity(config.arms.len());
    for &arm in &config.arms {
        let pre = arm.pretrain_config(&config.pretrain);
        let mut seeds = Vec::with_capacity(config.seeds.len());
        for &seed in &config.seeds {
            log::info!("ablation: arm {arm}, seed {seed}");
            let outcome = run_seed(&parts, &pre, &config.finetune, seed).unwrap_or_else(|e| {
                log::warn!("ablation: arm {arm}, seed {seed} failed: {e}");
                SeedOutcome {
                    seed,
                    test: None,
                    error: Some(e.to_string()),
                    clustering_calls: 0,
                    fallback_plans: 0,
                    masked_counts: Vec::new(),
                    log: Vec::new(),
                }
            });
            seeds.push(outcome);
        }
        arms.push(ArmReport { arm, seeds });
    }
    Ok(AblationReport { arms })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub split: SplitSpec,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub seeds: Vec<u64>,
    /// Strictly ascending pretraining lengths; 0 means no pretraining.
    pub epochs: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            seeds: vec![0],
            epochs: vec![0, 10, 25, 50, 100],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub pretrain_epochs: usize,
    pub seeds: usize,
    pub dsc_mean: f64,
    pub dsc_std: f64,
    pub ppv_mean: f64,
    pub sen_mean: f64,
}

/// Test DSC after finetuning from each listed pretraining length. One
/// pretraining run per seed, as long as the largest entry, provides every
/// intermediate checkpoint; its schedules span that full length.
pub fn schedule_sweep(samples: &[Sample], config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if config.epochs.is_empty() || config.epochs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sweep epochs must be non-empty and strictly ascending"));
    }
    if config.seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one seed"));
    }
    let parts = parts(samples, &config.split)?;
    let longest = *config.epochs.last().expect("non-empty");
    let mut per_point: Vec<Vec<MetricSummary>> = vec![Vec::new(); config.epochs.len()];
    for &seed in &config.seeds {
        let mut pre = config.pretrain.clone();
        pre.train.seed = seed;
        pre.train.epochs = longest;
        let mut fine = config.finetune.clone();
        fine.train.seed = seed;

        let mut snapshots: Vec<ModelWeights> = Vec::with_capacity(config.epochs.len());
        if config.epochs[0] == 0 {
            let zero = PretrainConfig {
                train: super::TrainConfig {
                    epochs: 0,
                    ..pre.train.clone()
                },
                ..pre.clone()
            };
            snapshots.push(pretrain_with(&parts.pretrain, &zero, |_, _| Ok(()))?.weights);
        }
        pretrain_with(&parts.pretrain, &pre, |stats, w| {
            if config.epochs.contains(&stats.epoch) {
                snapshots.push(w.clone());
            }
            Ok(())
        })?;
        for (k, w) in snapshots.iter().enumerate() {
            let f = finetune(&parts.labeled, &parts.val, Some(w), &fine)?;
            let t = evaluate(&f.weights, &parts.test, fine.threshold, fine.aggregation)?;
            per_point[k].push(t.summary);
        }
    }
    Ok(config
        .epochs
        .iter()
        .zip(per_point)
        .map(|(&e, ms)| {
            let (dsc_mean, dsc_std) = mean_std(&ms.iter().map(|m| m.dsc).collect::<Vec<_>>());
            SweepRow {
                pretrain_epochs: e,
                seeds: ms.len(),
                dsc_mean,
                dsc_std,
                ppv_mean: ms.iter().map(|m| m.ppv).sum::<f64>() / ms.len() as f64,
                sen_mean: ms.iter().map(|m| m.sen).sum::<f64>() / ms.len() as f64,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_dataset, SyntheticConfig};
    use crate::model::NetConfig;
    use crate::pipeline::TrainConfig;

    fn small_config() -> (Vec<Sample>, AblationConfig) {
        let data = synthetic_dataset(
            &SyntheticConfig {
                image_size: 32,
                lesion_radius: (3.0, 6.0),
                ..SyntheticConfig::default()
            },
            20,
            2,
        )
        .unwrap();
        let net = NetConfig {
            base_channels: 2,
            depth: 1,
            convs_per_stage: 1,
            ..NetConfig::default()
        };
        let train = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let cfg = AblationConfig {
            pretrain: PretrainConfig {
                net,
                train: train.clone(),
                ..PretrainConfig::default()
            },
            finetune: FinetuneConfig {
                net,
                train,
                ..FinetuneConfig::default()
            },
            ..AblationConfig::default()
        };
        (data, cfg)
    }

    #[test]
    fn four_arms_with_metrics() {
        let (data, cfg) = small_config();
        let r = ablate(&data, &cfg).unwrap();
        let labels: Vec<&str> = r.rows().iter().map(|r| r.arm).collect();
        assert_eq!(labels, ["base", "base+AMS", "base+MPS", "base+AMS+MPS"]);
        for a in &r.arms {
            let s = &a.seeds[0];
            assert!(s.test.is_some(), "{:?}", s.error);
            assert_eq!(s.clustering_calls == 0, a.arm.selection() == SelectionMode::Random);
            assert!(s.masked_counts.windows(2).all(|w| w[0] <= w[1]));
        }
        assert!(r.to_table().contains("0.4584"));
    }

    #[test]
    fn sweep_rows_match_epochs() {
        let (data, cfg) = small_config();
        let sweep = SweepConfig {
            split: cfg.split,
            pretrain: cfg.pretrain,
            finetune: cfg.finetune,
            seeds: vec![0],
            epochs: vec![0, 1, 2],
        };
        let rows = schedule_sweep(&data, &sweep).unwrap();
        assert_eq!(rows.iter().map(|r| r.pretrain_epochs).collect::<Vec<_>>(), [0, 1, 2]);
        let one = schedule_sweep(&data, &SweepConfig { epochs: vec![2], ..sweep }).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], rows[2]);
    }
}
