//! Expected-log-probability diagnostics on finite outcome spaces.
//!
//! Sign convention: the quantities are expectations of log-probabilities with
//! no leading minus sign, so `h1 = E_P[log P]` is the negative Shannon entropy
//! and is always `<= 0`. Natural logarithms throughout.
//!
//! `h2 <= h1` holds for every model (Gibbs' inequality). The relation of `h3`
//! to the others depends entirely on the sampler and is only reported.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::ImageTensor;
use crate::rng;
use crate::selection::{self, ClusterMethod};

const NORM_TOL: f64 = 1e-12;

/// True distribution `p` and model distribution `q` over the same finite
/// set of (visible part, masked part) outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJointModel {
    outcomes: Vec<String>,
    p: Vec<f64>,
    q: Vec<f64>,
    /// Outcome index chosen by masked-patch selection, when the model was
    /// built from a toy image.
    mps_outcome: Option<usize>,
}

fn check_distribution(name: &str, v: &[f64]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::invalid(format!(
            "{name}[{i}] = {} is not a non-negative probability",
            v[i]
        )));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > NORM_TOL {
        return Err(Error::invalid(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

impl DiscreteJointModel {
    pub fn new(outcomes: Vec<String>, p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.len() != q.len() || p.len() != outcomes.len() {
            return Err(Error::invalid(format!(
                "model needs matching non-empty outcome/p/q lengths, got {}/{}/{}",
                outcomes.len(),
                p.len(),
                q.len()
            )));
        }
        check_distribution("p", &p)?;
        check_distribution("q", &q)?;
        if let Some(i) = (0..p.len()).find(|&i| p[i] > 0.0 && q[i] <= 0.0) {
            return Err(Error::invalid(format!(
                "q is zero on outcome {i} where p is positive"
            )));
        }
        Ok(Self {
            outcomes,
            p,
            q,
            mps_outcome: None,
        })
    }

    /// Model with anonymous outcomes `o0, o1, ...`.
    pub fn from_probs(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        let outcomes = (0..p.len()).map(|i| format!("o{i}")).collect();
        Self::new(outcomes, p, q)
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn mps_outcome(&self) -> Option<usize> {
        self.mps_outcome
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerStrategy {
    /// Point mass on the outcome masked-patch selection would produce.
    MpsInduced,
    /// Uniform over the support of `p`.
    Uniform,
    /// Point mass on the most probable outcome under `p`.
    ArgmaxP,
    /// Point mass on the least probable outcome within the support of `p`.
    ArgminSupport,
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerDistribution {
    probs: Vec<f64>,
    strategy: SamplerStrategy,
    seed: u64,
}

impl SamplerDistribution {
    /// A user-supplied sampling distribution.
    pub fn custom(probs: Vec<f64>, seed: u64) -> Result<Self> {
        check_distribution("sampler", &probs)?;
        Ok(Self {
            probs,
            strategy: SamplerStrategy::Custom,
            seed,
        })
    }

    /// Build one of the built-in strategies for `model`.
    pub fn for_model(
        model: &DiscreteJointModel,
        strategy: SamplerStrategy,
        seed: u64,
    ) -> Result<Self> {
        let k = model.len();
        let point = |i: usize| {
            let mut v = vec![0.0; k];
            v[i] = 1.0;
            v
        };
        let probs = match strategy {
            SamplerStrategy::MpsInduced => point(model.mps_outcome.ok_or_else(|| {
                Error::invalid("mps-induced sampler needs a model built from a toy image")
            })?),
            SamplerStrategy::Uniform => {
                let support = model.p.iter().filter(|&&x| x > 0.0).count() as f64;
                model
                    .p
                    .iter()
                    .map(|&x| if x > 0.0 { 1.0 / support } else { 0.0 })
                    .collect()
            }
            SamplerStrategy::ArgmaxP => point(argbest(&model.p, |a, b| a > b)),
            SamplerStrategy::ArgminSupport => point(argbest(&model.p, |a, b| a > 0.0 && (b <= 0.0 || a < b))),
            SamplerStrategy::Custom => {
                return Err(Error::invalid("custom samplers are built with SamplerDistribution::custom"))
            }
        };
        Ok(Self {
            probs,
            strategy,
            seed,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn strategy(&self) -> SamplerStrategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Index of the first element preferred by `better` over every earlier one.
fn argbest(v: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if better(v[i], v[best]) {
            best = i;
        }
    }
    best
}

/// `E_P[log P]`.
pub fn h1(model: &DiscreteJointModel) -> f64 {
    model
        .p
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum()
}

/// `E_P[log Q]`.
pub fn h2(model: &DiscreteJointModel) -> f64 {
    model
        .p
        .iter()
        .zip(&model.q)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * q.ln())
        .sum()
}

/// `KL(P || Q)`, always `>= 0`.
pub fn kl(model: &DiscreteJointModel) -> f64 {
    model
        .p
        .iter()
        .zip(&model.q)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p / q).ln())
        .sum()
}

/// `E_{p_hat}[log P]`.
pub fn h3(model: &DiscreteJointModel, sampler: &SamplerDistribution) -> Result<f64> {
    if sampler.probs.len() != model.len() {
        return Err(Error::invalid(format!(
            "sampler covers {} outcomes, model has {}",
            sampler.probs.len(),
            model.len()
        )));
    }
    if let Some(i) = (0..model.len()).find(|&i| sampler.probs[i] > 0.0 && model.p[i] <= 0.0) {
        return Err(Error::invalid(format!(
            "sampler puts mass on outcome {i} outside the support of p"
        )));
    }
    Ok(sampler
        .probs
        .iter()
        .zip(&model.p)
        .filter(|(&s, _)| s > 0.0)
        .map(|(&s, &p)| s * p.ln())
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Seeded Monte Carlo estimate of `E_p[f(X)]` with its standard error.
pub fn monte_carlo_expectation<F>(f: F, p: &[f64], samples: usize, seed: u64) -> Result<McEstimate>
where
    F: Fn(usize) -> f64,
{
    if samples == 0 {
        return Err(Error::invalid("monte carlo needs at least one sample"));
    }
    let dist = WeightedIndex::new(p)
        .map_err(|e| Error::invalid(format!("invalid sampling distribution: {e}")))?;
    let mut rng = rng::rng_from(seed);
    let values: Vec<f64> = (0..samples).map(|_| f(dist.sample(&mut rng))).collect();
    let n = samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if samples > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        stderr,
        samples,
    })
}

/// A random model over `k` outcomes: `p` and `q` are independent
/// normalized exponential draws.
pub fn random_model(k: usize, seed: u64) -> Result<DiscreteJointModel> {
    if k == 0 {
        return Err(Error::invalid("random model needs at least one outcome"));
    }
    let mut rng = rng::rng_from(seed);
    let mut draw = || {
        let raw: Vec<f64> = (0..k)
            .map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-3)
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let p = draw();
    let q = draw();
    DiscreteJointModel::from_probs(p, q)
}

/// Parameters for a model over masked-patch subsets of a toy image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyModelConfig {
    pub patch_size: usize,
    /// Number of masked patches in every outcome.
    pub masked: usize,
    /// `p(S) ∝ exp(beta_p * |S ∩ lesion|)`.
    pub beta_p: f64,
    /// `q(S) ∝ exp(beta_q * |S ∩ lesion| + noise)`.
    pub beta_q: f64,
    pub q_noise: f64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 4,
            masked: 3,
            beta_p: 1.5,
            beta_q: 0.8,
            q_noise: 0.3,
        }
    }
}

/// Enumerate every size-`masked` subset of the image's patches as an outcome.
///
/// The true distribution favors subsets that cover lesion patches (taken
/// from `lesion_mask`); `q` is a blurrier, noisy version of the same
/// preference. The masked-patch selection outcome is the subset formed by
/// the first `masked` entries of the selection ordering.
pub fn toy_mask_model(
    image: &ImageTensor,
    lesion_mask: &[bool],
    config: &ToyModelConfig,
    seed: u64,
) -> Result<DiscreteJointModel> {
    let grid = image.grid(config.patch_size)?;
    let n = grid.len();
    if n > 20 {
        return Err(Error::invalid(format!(
            "toy model enumerates subsets and supports at most 20 patches, got {n}"
        )));
    }
    if config.masked == 0 || config.masked >= n {
        return Err(Error::invalid(format!(
            "toy model needs 0 < masked < {n}, got {}",
            config.masked
        )));
    }
    if lesion_mask.len() != image.height() * image.width() {
        return Err(Error::invalid("lesion mask size does not match the image"));
    }
    let mut lesion_patch = vec![false; n];
    for y in 0..image.height() {
        for x in 0..image.width() {
            if lesion_mask[y * image.width() + x] {
                lesion_patch[grid.patch_of(y, x)] = true;
            }
        }
    }

    let subsets: Vec<u32> = (0u32..(1 << n))
        .filter(|s| s.count_ones() as usize == config.masked)
        .collect();
    let overlap = |s: u32| (0..n).filter(|&i| s & (1 << i) != 0 && lesion_patch[i]).count() as f64;

    let mut rng = rng::rng_for(seed, "toy-q");
    let p_raw: Vec<f64> = subsets.iter().map(|&s| (config.beta_p * overlap(s)).exp()).collect();
    let q_raw: Vec<f64> = subsets
        .iter()
        .map(|&s| {
            let noise = config.q_noise * (2.0 * rng.random::<f64>() - 1.0);
            (config.beta_q * overlap(s) + noise).exp()
        })
        .collect();
    let normalize = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };

    let ordering = selection::select_patches(image, config.patch_size, ClusterMethod::KMeans, seed)?;
    let chosen = ordering.order()[..config.masked]
        .iter()
        .fold(0u32, |acc, &i| acc | (1 << i));
    let mps_outcome = subsets.iter().position(|&s| s == chosen);

    let outcomes = subsets
        .iter()
        .map(|&s| {
            let masked: Vec<String> = (0..n).filter(|i| s & (1 << i) != 0).map(|i| i.to_string()).collect();
            format!("masked={}", masked.join("+"))
        })
        .collect();
    let mut model = DiscreteJointModel::new(outcomes, normalize(p_raw), normalize(q_raw))?;
    model.mps_outcome = mps_outcome;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderingRow {
    pub model_id: usize,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub kl: f64,
    pub h2_le_h1: bool,
    pub h3_le_h2: bool,
}

/// Evaluate `h1`, `h2`, `h3` on each model under the chosen sampler strategy.
pub fn ordering_check(
    models: &[DiscreteJointModel],
    strategy: SamplerStrategy,
    seed: u64,
) -> Result<Vec<OrderingRow>> {
    if models.is_empty() {
        return Err(Error::invalid("ordering check needs at least one model"));
    }
    models
        .iter()
        .enumerate()
        .map(|(model_id, m)| {
            let sampler = SamplerDistribution::for_model(m, strategy, seed)?;
            let (a, b, c) = (h1(m), h2(m), h3(m, &sampler)?);
            Ok(OrderingRow {
                model_id,
                h1: a,
                h2: b,
                h3: c,
                kl: kl(m),
                h2_le_h1: b <= a + NORM_TOL,
                h3_le_h2: c <= b + NORM_TOL,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(p: &[f64], q: &[f64]) -> DiscreteJointModel {
        DiscreteJointModel::from_probs(p.to_vec(), q.to_vec()).unwrap()
    }

    #[test]
    fn h1_uniform_and_point_mass() {
        let m = model(&[0.25; 4], &[0.25; 4]);
        assert!((h1(&m) - (0.25f64).ln()).abs() < 1e-15);
        let m = model(&[1.0, 0.0], &[0.5, 0.5]);
        assert_eq!(h1(&m), 0.0);
    }

    #[test]
    fn h2_equals_h1_when_q_is_p() {
        let m = model(&[0.5, 0.25, 0.25], &[0.5, 0.25, 0.25]);
        assert_eq!(h1(&m), h2(&m));
        assert_eq!(kl(&m), 0.0);
    }

    #[test]
    fn kl_point_mass_vs_uniform() {
        let m = model(&[1.0, 0.0], &[0.5, 0.5]);
        assert!((kl(&m) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn q_zero_on_support_rejected() {
        assert!(DiscreteJointModel::from_probs(vec![0.5, 0.5], vec![1.0, 0.0]).is_err());
        assert!(DiscreteJointModel::from_probs(vec![0.5, 0.6], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn h3_reduces_to_h1() {
        let m = model(&[0.5, 0.3, 0.2], &[0.2, 0.3, 0.5]);
        let s = SamplerDistribution::custom(m.p().to_vec(), 0).unwrap();
        assert!((h3(&m, &s).unwrap() - h1(&m)).abs() < 1e-15);
    }

    #[test]
    fn h3_point_masses() {
        let m = model(&[0.5, 0.3, 0.2, 0.0], &[0.25; 4]);
        let top = SamplerDistribution::for_model(&m, SamplerStrategy::ArgmaxP, 0).unwrap();
        assert_eq!(h3(&m, &top).unwrap(), 0.5f64.ln());
        assert!(h3(&m, &top).unwrap() >= h1(&m));
        let low = SamplerDistribution::for_model(&m, SamplerStrategy::ArgminSupport, 0).unwrap();
        assert_eq!(h3(&m, &low).unwrap(), 0.2f64.ln());
        assert!(h3(&m, &low).unwrap() <= h1(&m));
    }

    #[test]
    fn h3_support_violation_rejected() {
        let m = model(&[1.0, 0.0], &[0.5, 0.5]);
        let s = SamplerDistribution::custom(vec![0.0, 1.0], 0).unwrap();
        assert!(h3(&m, &s).is_err());
    }

    #[test]
    fn uniform_sampler_covers_support_only() {
        let m = model(&[0.5, 0.0, 0.5], &[0.4, 0.2, 0.4]);
        let s = SamplerDistribution::for_model(&m, SamplerStrategy::Uniform, 0).unwrap();
        assert_eq!(s.probs(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn mc_constant_function_is_exact() {
        let est = monte_carlo_expectation(|_| 3.25, &[0.2, 0.8], 500, 1).unwrap();
        assert_eq!(est.mean, 3.25);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn mc_fair_coin() {
        let est = monte_carlo_expectation(|i| i as f64, &[0.5, 0.5], 10_000, 11).unwrap();
        assert!((est.mean - 0.5).abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn mc_zero_samples_rejected() {
        assert!(monte_carlo_expectation(|_| 0.0, &[1.0], 0, 0).is_err());
    }

    #[test]
    fn ordering_check_rejects_empty() {
        assert!(ordering_check(&[], SamplerStrategy::Uniform, 0).is_err());
    }

    #[test]
    fn mps_sampler_requires_toy_model() {
        let m = model(&[0.5, 0.5], &[0.5, 0.5]);
        assert!(SamplerDistribution::for_model(&m, SamplerStrategy::MpsInduced, 0).is_err());
    }
}
