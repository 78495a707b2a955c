//! Runtime and lesion-recall comparison of the clustering methods.
//!
//! Inputs are synthetic feature rows of fixed dimension: a broad
//! background blob and a small, tight, well-separated lesion blob, so the
//! cost of each method is measured as a function of the row count alone.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{cluster_rows_within, label_lesion_cluster, ClusterMethod, Deadline, Points};
use crate::error::{Error, Result};
use crate::patching::PatchLabel;
use crate::report;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub patch_counts: Vec<usize>,
    pub methods: Vec<ClusterMethod>,
    pub trials: usize,
    pub seed: u64,
    /// Per-run budget; a run that exceeds it is recorded as timed out.
    pub timeout_secs: Option<f64>,
    pub feature_dim: usize,
    pub lesion_fraction: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            patch_counts: vec![64, 256, 1024, 4096],
            methods: ClusterMethod::ALL.to_vec(),
            trials: 3,
            seed: 0,
            timeout_secs: Some(60.0),
            feature_dim: 4,
            lesion_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchStatus {
    Ok,
    TimedOut,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchCell {
    pub method: ClusterMethod,
    pub patch_count: usize,
    pub trial: usize,
    pub wall_time_seconds: f64,
    pub lesion_recall: Option<f64>,
    pub status: BenchStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
    /// Fitted log-log slope of median runtime against patch count, per
    /// method. `None` when fewer than two sizes finished.
    pub slopes: Vec<(ClusterMethod, Option<f64>)>,
}

impl BenchReport {
    pub fn slope(&self, method: ClusterMethod) -> Option<f64> {
        self.slopes.iter().find(|(m, _)| *m == method).and_then(|(_, s)| *s)
    }

    pub fn write_csv(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        report::write_csv(path, config_hash, &self.cells)
    }
}

/// `n` synthetic rows with a lesion blob of roughly `lesion_fraction * n`
/// points; returns the rows and the ground-truth lesion flags.
pub fn bench_points(n: usize, dim: usize, lesion_fraction: f64, seed: u64) -> Result<(Points, Vec<bool>)> {
    if n < 2 || dim == 0 {
        return Err(Error::invalid("bench rows need n >= 2 and dim >= 1"));
    }
    let lesion = ((n as f64 * lesion_fraction).round() as usize).clamp(1, ((n - 1) / 2).max(1));
    let mut rng = rng::rng_from(seed);
    let mut truth: Vec<bool> = (0..n).map(|i| i < lesion).collect();
    truth.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * dim);
    for &is_lesion in &truth {
        for k in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(if is_lesion {
                if k == 0 {
                    10.0 + 0.3 * z
                } else {
                    0.3 * z
                }
            } else {
                z
            });
        }
    }
    Ok((Points::new(dim, data)?, truth))
}

fn recall(labels: &[PatchLabel], truth: &[bool]) -> f64 {
    let total = truth.iter().filter(|&&t| t).count();
    let hit = labels
        .iter()
        .zip(truth)
        .filter(|(l, &t)| t && **l == PatchLabel::Lesion)
        .count();
    hit as f64 / total as f64
}

fn row_variance(points: &Points) -> Vec<f64> {
    (0..points.len())
        .map(|i| {
            let r = points.row(i);
            let m = r.iter().sum::<f64>() / r.len() as f64;
            r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / r.len() as f64
        })
        .collect()
}

/// Least-squares slope of `ln y` on `ln x`.
pub(crate) fn log_log_slope(xy: &[(f64, f64)]) -> Option<f64> {
    if xy.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = xy.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Time every method on every size. Methods run one after another; nothing
/// else is timed concurrently.
pub fn cluster_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.patch_counts.is_empty() || config.methods.is_empty() || config.trials == 0 {
        return Err(Error::invalid("bench needs at least one size, one method and one trial"));
    }
    if config.patch_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("bench patch counts must be strictly ascending"));
    }
    let budget = config.timeout_secs.map(Duration::from_secs_f64);
    let mut cells = Vec::new();
    let mut slopes = Vec::new();
    for &method in &config.methods {
        let mut medians = Vec::new();
        for &n in &config.patch_counts {
            let mut times = Vec::new();
            let mut timed_out = false;
            for trial in 0..config.trials {
                let data_seed = rng::derive_indexed(config.seed, &format!("bench-{n}"), trial as u64);
                let (points, truth) = bench_points(n, config.feature_dim, config.lesion_fraction, data_seed)?;
                let start = Instant::now();
                let outcome = cluster_rows_within(&points, method, data_seed, Deadline::after(budget));
                let elapsed = start.elapsed().as_secs_f64();
                let (status, lesion_recall) = match outcome {
                    Ok(assign) => {
                        times.push(elapsed);
                        let labeling = label_lesion_cluster(&assign, &row_variance(&points))?;
                        (BenchStatus::Ok, Some(recall(&labeling.labels, &truth)))
                    }
                    Err(Error::TimedOut(_)) => {
                        timed_out = true;
                        (BenchStatus::TimedOut, None)
                    }
                    Err(e) => {
                        log::warn!("{method} on {n} rows failed: {e}");
                        (BenchStatus::Failed, None)
                    }
                };
                cells.push(BenchCell {
                    method,
                    patch_count: n,
                    trial,
                    wall_time_seconds: elapsed,
                    lesion_recall,
                    status,
                });
                if timed_out {
                    break;
                }
            }
            if times.len() == config.trials {
                medians.push((n as f64, median(&mut times)));
            }
            if timed_out {
                // larger sizes would only time out again
                break;
            }
        }
        slopes.push((method, log_log_slope(&medians)));
    }
    Ok(BenchReport { cells, slopes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xy: Vec<(f64, f64)> = [64.0, 256.0, 1024.0].iter().map(|&x| (x, 3.0 * x * x)).collect();
        assert!((log_log_slope(&xy).unwrap() - 2.0).abs() < 1e-12);
        assert!(log_log_slope(&xy[..1]).is_none());
    }

    #[test]
    fn single_cell_has_no_slope() {
        let cfg = BenchConfig {
            patch_counts: vec![64],
            methods: vec![ClusterMethod::KMeans],
            trials: 1,
            ..BenchConfig::default()
        };
        let r = cluster_bench(&cfg).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.slope(ClusterMethod::KMeans), None);
    }

    #[test]
    fn all_methods_recover_toy_lesions() {
        let cfg = BenchConfig {
            patch_counts: vec![64, 128],
            trials: 2,
            seed: 5,
            ..BenchConfig::default()
        };
        let r = cluster_bench(&cfg).unwrap();
        for cell in &r.cells {
            assert_eq!(cell.status, BenchStatus::Ok, "{cell:?}");
            assert_eq!(cell.lesion_recall, Some(1.0), "{cell:?}");
        }
    }

    #[test]
    fn descending_sizes_rejected() {
        let cfg = BenchConfig {
            patch_counts: vec![256, 64],
            ..BenchConfig::default()
        };
        assert!(cluster_bench(&cfg).is_err());
    }
}
