use std::path::{Path, PathBuf};

use mpsams::data::{generate_dataset, generate_sample, load_dataset, synthetic_dataset, Sample};
use mpsams::entropy::{ordering_check, random_model, toy_mask_model, DiscreteJointModel};
use mpsams::model::{read_checkpoint, write_checkpoint};
use mpsams::pipeline::{
    ablate, evaluate, finetune, metrics_log, pretrain_with, schedule_sweep, split_dataset, AblationConfig,
    SweepConfig,
};
use mpsams::report::{config_hash, write_csv};
use mpsams::rng;
use mpsams::selection::cluster_bench;
use serde::Serialize;

use crate::config::{ExperimentConfig, ModelSource};
use crate::fail::CliError;
use crate::plot::{self, PlotSpec};

/// A resolved run: the config with derived seeds, its hash and the
/// output directory.
pub struct Run {
    pub config: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Run {
    pub fn new(mut config: ExperimentConfig, out: PathBuf) -> Result<Self, CliError> {
        config.derive_seeds();
        let hash = config_hash(&config)?;
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(format!("cannot create {}: {e}", out.display())))?;
        let snapshot = serde_json::to_string_pretty(&config).expect("config serializes");
        log::info!("resolved config (hash {hash}):\n{snapshot}");
        write_text(&out.join("config.json"), &(snapshot + "\n"))?;
        Ok(Self { config, hash, out })
    }

    fn csv<S: Serialize>(&self, name: &str, rows: &[S]) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        write_csv(&path, Some(&self.hash), rows)?;
        Ok(path)
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn load_samples(cfg: &ExperimentConfig) -> Result<Vec<Sample>, CliError> {
    let samples = match &cfg.data.manifest {
        Some(path) => load_dataset(path, cfg.pretrain.patch_size)?,
        None => synthetic_dataset(&cfg.data.synthetic, cfg.data.count, cfg.data_seed())?,
    };
    if samples.is_empty() {
        return Err(CliError::data("dataset is empty"));
    }
    Ok(samples)
}

fn pick<'a>(samples: &'a [Sample], idx: &[usize]) -> Vec<&'a Sample> {
    idx.iter().map(|&i| &samples[i]).collect()
}

pub fn gen_data(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let manifest = generate_dataset(&cfg.data.synthetic, cfg.data.count, cfg.data_seed(), &run.out)?;
    println!(
        "wrote {} samples and {}",
        manifest.samples.len(),
        run.out.join(mpsams::data::MANIFEST_FILE).display()
    );
    Ok(())
}

pub fn pretrain(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let samples = load_samples(cfg)?;
    let split = split_dataset(samples.len(), &cfg.split)?;
    let images: Vec<_> = split.train.iter().map(|&i| &samples[i].image).collect();
    let every = cfg.output.checkpoint_every.filter(|&k| k > 0);
    let ckpt_dir = run.out.join("checkpoints");
    let outcome = pretrain_with(&images, &cfg.pretrain, |stats, weights| {
        log::info!(
            "pretrain epoch {} loss {:.6} sigma {:.4} n {} lr {:.3e}",
            stats.epoch,
            stats.loss,
            stats.sigma,
            stats.n,
            stats.lr
        );
        if let Some(k) = every {
            if stats.epoch % k == 0 {
                write_checkpoint(&ckpt_dir.join(format!("epoch_{:04}.mpsw", stats.epoch)), weights)?;
            }
        }
        Ok(())
    })?;
    let ckpt = run.out.join("pretrain.mpsw");
    write_checkpoint(&ckpt, &outcome.weights)?;
    let loss = run.csv("loss.csv", &outcome.curve)?;
    println!(
        "pretrained on {} images for {} epochs ({} clustering runs, {} fallbacks); wrote {} and {}",
        images.len(),
        outcome.curve.len(),
        outcome.clustering_calls,
        outcome.fallback_plans,
        ckpt.display(),
        loss.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TestRow {
    split: &'static str,
    images: usize,
    dsc: f64,
    ppv: f64,
    sen: f64,
    kept_epoch: usize,
    transferred_tensors: usize,
}

pub fn finetune_cmd(run: &Run, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let cfg = &run.config;
    let pretrained = checkpoint.map(read_checkpoint).transpose()?;
    let samples = load_samples(cfg)?;
    let split = split_dataset(samples.len(), &cfg.split)?;
    let (labeled, val, test) = (
        pick(&samples, &split.labeled),
        pick(&samples, &split.val),
        pick(&samples, &split.test),
    );
    let outcome = finetune(&labeled, &val, pretrained.as_ref(), &cfg.finetune)?;
    write_checkpoint(&run.out.join("best.mpsw"), &outcome.weights)?;
    let metrics = run.csv("metrics.csv", &metrics_log(&[], &outcome.curve))?;
    let eval = evaluate(&outcome.weights, &test, cfg.finetune.threshold, cfg.finetune.aggregation)?;
    let s = eval.summary;
    run.csv(
        "test_metrics.csv",
        &[TestRow {
            split: "test",
            images: test.len(),
            dsc: s.dsc,
            ppv: s.ppv,
            sen: s.sen,
            kept_epoch: outcome.kept_epoch,
            transferred_tensors: outcome.transferred,
        }],
    )?;
    println!(
        "finetuned on {} labeled images (kept epoch {}); test DSC {:.4} PPV {:.4} Sen {:.4}; wrote {}",
        labeled.len(),
        outcome.kept_epoch,
        s.dsc,
        s.ppv,
        s.sen,
        metrics.display()
    );
    Ok(())
}

pub fn ablate_cmd(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let samples = load_samples(cfg)?;
    let ab = AblationConfig {
        split: cfg.split.clone(),
        pretrain: cfg.pretrain.clone(),
        finetune: cfg.finetune.clone(),
        seeds: cfg.repeat_seeds(cfg.ablation.repeats),
        arms: cfg.ablation.arms.clone(),
    };
    let report = ablate(&samples, &ab)?;
    report.write_csv(&run.out.join("ablation.csv"), Some(&run.hash))?;
    report.write_seed_csv(&run.out.join("ablation_seeds.csv"), Some(&run.hash))?;
    let table = report.to_table();
    write_text(&run.out.join("ablation.txt"), &table)?;
    print!("{table}");
    if report.arms.iter().all(|a| a.mean().is_none()) {
        return Err(CliError {
            code: crate::fail::EXIT_TRAINING,
            kind: "training",
            message: "every ablation arm failed".into(),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct SlopeRow {
    method: String,
    slope: Option<f64>,
}

pub fn cluster_bench_cmd(run: &Run) -> Result<(), CliError> {
    let report = cluster_bench(&run.config.bench)?;
    let path = run.out.join("bench.csv");
    report.write_csv(&path, Some(&run.hash))?;
    let slopes: Vec<SlopeRow> = report
        .slopes
        .iter()
        .map(|(m, s)| SlopeRow {
            method: m.to_string(),
            slope: *s,
        })
        .collect();
    run.csv("bench_slopes.csv", &slopes)?;
    for s in &slopes {
        match s.slope {
            Some(v) => println!("{:<14} slope {v:.3}", s.method),
            None => println!("{:<14} slope n/a", s.method),
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn entropy_check(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let e = &cfg.entropy;
    if e.models == 0 {
        return Err(CliError::config("entropy.models must be >= 1"));
    }
    let seed = cfg.entropy_seed();
    let models: Vec<DiscreteJointModel> = (0..e.models as u64)
        .map(|i| match e.source {
            ModelSource::Random => random_model(e.outcomes, rng::derive_indexed(seed, "model", i)),
            ModelSource::Toy => {
                let (image, mask) = generate_sample(&e.toy_image, rng::derive_indexed(seed, "toy-image", i))?;
                toy_mask_model(&image, &mask, &e.toy, rng::derive_indexed(seed, "toy", i))
            }
        })
        .collect::<Result<_, _>>()?;
    let rows = ordering_check(&models, e.strategy, seed)?;
    let path = run.csv("entropy.csv", &rows)?;
    let h2_ok = rows.iter().filter(|r| r.h2_le_h1).count();
    let h3_ok = rows.iter().filter(|r| r.h3_le_h2).count();
    println!(
        "{} models: H2 <= H1 in {h2_ok}, H3 <= H2 in {h3_ok}; wrote {}",
        rows.len(),
        path.display()
    );
    Ok(())
}

pub fn sweep(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let samples = load_samples(cfg)?;
    let sw = SweepConfig {
        split: cfg.split.clone(),
        pretrain: cfg.pretrain.clone(),
        finetune: cfg.finetune.clone(),
        seeds: cfg.repeat_seeds(cfg.sweep.repeats),
        epochs: cfg.sweep.epochs.clone(),
    };
    let rows = schedule_sweep(&samples, &sw)?;
    let path = run.csv("sweep.csv", &rows)?;
    for r in &rows {
        println!("pretrain epochs {:>5}: DSC {:.4}", r.pretrain_epochs, r.dsc_mean);
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn plot_cmd(csv: &Path, out_svg: &Path, spec: &PlotSpec) -> Result<(), CliError> {
    let (x_label, series) = plot::load_series(csv, spec)?;
    let y_label = if spec.y.len() == 1 { spec.y[0].clone() } else { "value".into() };
    let title = spec.title.clone().or_else(|| csv.file_stem().map(|s| s.to_string_lossy().into_owned()));
    let svg = plot::render(&series, &x_label, &y_label, spec.log, title.as_deref());
    if let Some(dir) = out_svg.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    }
    write_text(out_svg, &svg)?;
    println!("wrote {} ({} series)", out_svg.display(), series.len());
    Ok(())
}
