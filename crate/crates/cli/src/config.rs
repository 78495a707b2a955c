//! Experiment configuration: defaults, then a JSON file, then `--set`
//! overrides, deserialized strictly so unknown keys are rejected by path.

use std::path::{Path, PathBuf};

use mpsams::data::SyntheticConfig;
use mpsams::entropy::{SamplerStrategy, ToyModelConfig};
use mpsams::pipeline::{Arm, FinetuneConfig, PretrainConfig, SplitSpec};
use mpsams::rng;
use mpsams::selection::BenchConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fail::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root of every random stream in a run.
    pub seed: u64,
    pub data: DataSection,
    pub split: SplitSpec,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub ablation: RepeatSection,
    pub sweep: SweepSection,
    pub bench: BenchConfig,
    pub entropy: EntropySection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            split: SplitSpec::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            ablation: RepeatSection {
                repeats: 3,
                arms: Arm::ALL.to_vec(),
            },
            sweep: SweepSection::default(),
            bench: BenchConfig::default(),
            entropy: EntropySection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Load this manifest instead of generating samples in memory.
    pub manifest: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub count: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            manifest: None,
            synthetic: SyntheticConfig::default(),
            count: 360,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepeatSection {
    pub repeats: usize,
    pub arms: Vec<Arm>,
}

impl Default for RepeatSection {
    fn default() -> Self {
        Self {
            repeats: 1,
            arms: Arm::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub repeats: usize,
    pub epochs: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            repeats: 1,
            epochs: vec![0, 10, 25, 50, 100],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Independent random `p` and `q` over `outcomes` outcomes.
    Random,
    /// Masked-subset models built on small synthetic images.
    Toy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropySection {
    pub models: usize,
    pub source: ModelSource,
    pub outcomes: usize,
    pub strategy: SamplerStrategy,
    pub toy: ToyModelConfig,
    pub toy_image: SyntheticConfig,
}

impl Default for EntropySection {
    fn default() -> Self {
        Self {
            models: 100,
            source: ModelSource::Random,
            outcomes: 16,
            strategy: SamplerStrategy::Uniform,
            toy: ToyModelConfig::default(),
            toy_image: SyntheticConfig {
                image_size: 16,
                lesion_count: (1, 1),
                lesion_radius: (2.0, 3.0),
                ..SyntheticConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Pretraining also writes a checkpoint every this many epochs.
    pub checkpoint_every: Option<usize>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { checkpoint_every: None }
    }
}

impl ExperimentConfig {
    /// Seeds of every sub-stream, derived from the root seed:
    /// `data` for sample generation, `split`, `pretrain`, `finetune`,
    /// `bench`, `entropy`, and `repeat[i]` for ablation and sweep repeats.
    pub fn derive_seeds(&mut self) {
        let root = self.seed;
        self.split.seed = rng::derive_seed(root, "split");
        self.pretrain.train.seed = rng::derive_seed(root, "pretrain");
        self.finetune.train.seed = rng::derive_seed(root, "finetune");
        self.bench.seed = rng::derive_seed(root, "bench");
    }

    pub fn data_seed(&self) -> u64 {
        rng::derive_seed(self.seed, "data")
    }

    pub fn entropy_seed(&self) -> u64 {
        rng::derive_seed(self.seed, "entropy")
    }

    pub fn repeat_seeds(&self, repeats: usize) -> Vec<u64> {
        (0..repeats as u64).map(|i| rng::derive_indexed(self.seed, "repeat", i)).collect()
    }
}

/// Merge `overlay` into `base`; objects merge key by key, anything else
/// replaces.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Set `path` (dot-separated) to `raw`, read as JSON when it parses and as
/// a string otherwise.
fn set_path(root: &mut Value, path: &str, raw: &str) -> Result<(), CliError> {
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(CliError::config(format!("override key `{path}` is not a dotted path")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            _ => {
                return Err(CliError::config(format!(
                    "override key `{path}`: `{}` is not a section",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("path has at least one part")
}

/// Resolve defaults < file < overrides (each `key=value`).
pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut value = serde_json::to_value(ExperimentConfig::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !parsed.is_object() {
            return Err(CliError::config(format!("config {} must be a JSON object", path.display())));
        }
        merge(&mut value, parsed);
    }
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("override `{item}` is not key=value")))?;
        set_path(&mut value, key.trim(), raw)?;
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            CliError::config(inner.to_string())
        } else {
            CliError::config(format!("{path}: {inner}"))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_beat_defaults() {
        let cfg = resolve(None, &["pretrain.train.epochs=3".into(), "seed=9".into()]).unwrap();
        assert_eq!(cfg.pretrain.train.epochs, 3);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = resolve(None, &["pretrain.train.lr=0.1".into()]).unwrap_err();
        assert!(err.message.contains("pretrain.train"), "{}", err.message);
        assert!(err.message.contains("lr"), "{}", err.message);
    }

    #[test]
    fn string_fallback_for_enums() {
        let cfg = resolve(None, &["pretrain.method=hierarchical".into()]).unwrap();
        assert_eq!(cfg.pretrain.method, mpsams::selection::ClusterMethod::Hierarchical);
    }

    #[test]
    fn defaults_round_trip() {
        let d = ExperimentConfig::default();
        let v = serde_json::to_value(&d).unwrap();
        let back: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, d);
    }
}
