//! Training orchestration: dataset splits, masked pretraining, supervised
//! finetuning with encoder transfer, the four-arm ablation and the
//! pretraining-length sweep.

mod ablation;
mod optim;
mod train;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use ablation::{
    ablate, schedule_sweep, AblationConfig, AblationReport, AblationRow, AblationSeedRow, Arm, ArmReport,
    SeedOutcome, SweepConfig, SweepRow,
};
pub use optim::{LrSchedule, TrainConfig};
pub use train::{
    evaluate, finetune, finetune_from_scratch, metrics_log, pretrain, pretrain_with, EpochStats, Evaluation,
    FinetuneConfig, FinetuneEpoch, FinetuneOutcome, MetricsLogRow, PretrainConfig, PretrainOutcome,
    SelectionMode,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Fraction of the train split that keeps its labels.
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            labeled_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions {parts:?} must be non-negative and sum to 1"
            )));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "labeled_fraction {} must lie in (0, 1]",
                self.labeled_fraction
            )));
        }
        Ok(())
    }
}

/// Sample indices of each part. `labeled` and `unlabeled` partition
/// `train`; all four parts are disjoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub labeled: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then `round(n * train)` train and `round(n * val)` val
/// samples, the rest test. The labeled subset is `round(|train| *
/// labeled_fraction)` samples (at least one), kept in train order.
pub fn split_dataset(len: usize, spec: &SplitSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    if len < 10 {
        return Err(Error::invalid(format!("need at least 10 samples to split, got {len}")));
    }
    let n_train = (len as f64 * spec.train).round() as usize;
    let n_val = (len as f64 * spec.val).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= len {
        return Err(Error::invalid(format!(
            "{len} samples leave an empty part under fractions {}/{}/{}",
            spec.train, spec.val, spec.test
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::rng_for(spec.seed, "split"));
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();

    let k = ((n_train as f64 * spec.labeled_fraction).round() as usize).clamp(1, n_train);
    let mut picked: Vec<usize> =
        rand::seq::index::sample(&mut rng::rng_for(spec.seed, "labeled"), n_train, k).into_vec();
    picked.sort_unstable();
    let mut is_labeled = vec![false; n_train];
    picked.iter().for_each(|&p| is_labeled[p] = true);
    let labeled = picked.iter().map(|&p| train[p]).collect();
    let unlabeled = (0..n_train).filter(|&p| !is_labeled[p]).map(|p| train[p]).collect();
    Ok(DatasetSplit {
        train,
        unlabeled,
        labeled,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_one_one_with_ten_percent_labels() {
        let s = split_dataset(100, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len(), s.labeled.len()), (80, 10, 10, 8));
        assert_eq!(s.unlabeled.len(), 72);
        let mut all: Vec<usize> = [&s.unlabeled, &s.labeled, &s.val, &s.test].into_iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_dataset(100, &SplitSpec::default()).unwrap());
    }

    #[test]
    fn full_labels_equal_train() {
        let spec = SplitSpec {
            labeled_fraction: 1.0,
            ..SplitSpec::default()
        };
        let s = split_dataset(50, &spec).unwrap();
        assert_eq!(s.labeled, s.train);
        assert!(s.unlabeled.is_empty());
    }

    #[test]
    fn too_small_rejected() {
        assert!(split_dataset(9, &SplitSpec::default()).is_err());
        let spec = SplitSpec {
            train: 0.95,
            val: 0.05,
            test: 0.0,
            ..SplitSpec::default()
        };
        assert!(split_dataset(20, &spec).is_err());
    }
}
