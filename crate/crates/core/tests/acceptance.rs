//! Acceptance run: every criterion in order, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the timing-sensitive criteria do
//! not share the machine with other tests. Set `MPSAMS_ACCEPTANCE` to a
//! comma-separated list of criterion numbers to run a subset.

mod common;

use std::time::Instant;

use mpsams::data::{generate_sample, synthetic_dataset, SyntheticConfig, Texture};
use mpsams::entropy::{h1, h2, kl, monte_carlo_expectation, random_model, DiscreteJointModel};
use mpsams::metrics::compute_metrics;
use mpsams::model::{
    from_bytes, gradient_check, init_weights, masked_sq_error, read_checkpoint, reconstruction_loss, to_bytes,
    write_checkpoint, ModelWeights, NetConfig, Nonlinearity,
};
use mpsams::patching::{patchify, unpatchify, ImageTensor, MaskPlan, PatchLabel};
use mpsams::pipeline::{ablate, AblationConfig, AblationReport, Arm, SplitSpec};
use mpsams::schedule::{masked_count, masking_ratio, ScheduleParams};
use mpsams::selection::{cluster_bench, cluster_rows, select_patches, BenchConfig, ClusterMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn c1_schedule() -> Verdict {
    let p = ScheduleParams::adaptive(0.25, 12.0);
    let first = masking_ratio(1, &p).unwrap();
    let last = masking_ratio(800, &p).unwrap();
    let expected = 0.25 + 800f64.ln() / 12.0;
    let pass = first == 0.25 && (last - expected).abs() <= 1e-9 && (last - 0.8071).abs() < 5e-5;
    verdict(pass, format!("sigma(1) = {first}, sigma(800) = {last:.10} (expected {expected:.10})"))
}

fn c2_mask_count() -> Verdict {
    let mut checked = 0u64;
    let mut first_bad = None;
    for n in 1..=1024usize {
        for k in 0..=1000usize {
            let ratio = k as f64 / 1000.0;
            // exact rational floor, then the documented clamp
            let mut want = n * k / 1000;
            if k > 0 && k < 1000 && n >= 2 {
                want = want.clamp(1, n - 1);
            }
            let got = masked_count(n, ratio).unwrap();
            checked += 1;
            if got != want && first_bad.is_none() {
                first_bad = Some((n, k, got, want));
            }
        }
    }
    match first_bad {
        None => verdict(true, format!("{checked} (N, sigma) pairs agree with the integer oracle")),
        Some((n, k, got, want)) => verdict(false, format!("N={n} sigma={k}/1000: got {got}, oracle {want}")),
    }
}

fn c3_gradients() -> Verdict {
    let cfg = NetConfig {
        base_channels: 2,
        depth: 2,
        convs_per_stage: 2,
        nonlinearity: Nonlinearity::Tanh,
        ..NetConfig::default()
    };
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for seed in 0..5 {
        let r = gradient_check(&cfg, 8, 2, seed).unwrap();
        params = r.params;
        worst = worst.max(r.max_relative_error);
    }
    verdict(
        params <= 2000 && worst <= 1e-5,
        format!("{params} parameters, max relative error {worst:.2e} over 5 seeds"),
    )
}

fn c4_masked_only() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    let mut worst_loss_change: f64 = 0.0;
    let mut visible_grad_nonzero = 0usize;
    for trial in 0..20u64 {
        let data: Vec<f32> = (0..64 * 64).map(|_| rng.random()).collect();
        let original = ImageTensor::new(1, 64, 64, data).unwrap();
        let ordering = select_patches(&original, 8, ClusterMethod::KMeans, trial).unwrap();
        let n = rng.random_range(1..64);
        let plan = MaskPlan::new(ordering, n, trial).unwrap();
        let pixel_mask = plan.pixel_mask();
        let rec_data: Vec<f32> = (0..64 * 64).map(|_| rng.random()).collect();
        let rec = ImageTensor::new(1, 64, 64, rec_data.clone()).unwrap();
        let base = reconstruction_loss(&rec, &original, &plan).unwrap().total;
        let perturbed: Vec<f32> = rec_data
            .iter()
            .enumerate()
            .map(|(i, &v)| if pixel_mask[i] { v } else { v + rng.random_range(-5.0f32..5.0) })
            .collect();
        let moved = ImageTensor::new(1, 64, 64, perturbed.clone()).unwrap();
        let after = reconstruction_loss(&moved, &original, &plan).unwrap().total;
        worst_loss_change = worst_loss_change.max((after - base).abs());
        ok &= after == base;
        let (_, grad) = masked_sq_error(&perturbed, original.data(), &pixel_mask);
        visible_grad_nonzero += grad
            .iter()
            .zip(&pixel_mask)
            .filter(|(g, &m)| !m && **g != 0.0)
            .count();
    }
    verdict(
        ok && visible_grad_nonzero == 0,
        format!(
            "20 trials: max loss change {worst_loss_change:e}, non-zero visible gradients {visible_grad_nonzero}"
        ),
    )
}

/// Mean recall of lesion-overlapping patches over 100 images.
fn lesion_recall(texture: Texture, patch: usize) -> (f64, f64) {
    let cfg = SyntheticConfig {
        texture,
        ..SyntheticConfig::default()
    };
    let mut recall = 0.0;
    let mut area: f64 = 0.0;
    for i in 0..100u64 {
        let (img, mask) = generate_sample(&cfg, 5000 + i).unwrap();
        area = area.max(mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64);
        let truth = common::overlapping_patches(&mask, cfg.image_size, patch);
        let ordering = select_patches(&img, patch, ClusterMethod::KMeans, i).unwrap();
        let hits = truth
            .iter()
            .zip(ordering.labels())
            .filter(|(&t, &l)| t && l == PatchLabel::Lesion)
            .count();
        recall += hits as f64 / truth.iter().filter(|&&t| t).count() as f64;
    }
    (recall / 100.0, area)
}

fn c5_lesion_recovery() -> Verdict {
    let cfg = SyntheticConfig::default();
    let contrast = cfg.lesion_intensity - cfg.background_intensity;
    let (flat, area_f) = lesion_recall(Texture::Flat, 16);
    let (speckle, area_s) = lesion_recall(Texture::Speckle, 16);
    let setup_ok = contrast >= 0.5 && area_f <= 0.2 && area_s <= 0.2;
    verdict(
        setup_ok && flat >= 0.7 && speckle >= 0.5,
        format!(
            "recall flat {flat:.3} (need 0.7), speckle {speckle:.3} (need 0.5); contrast {contrast:.2}, max lesion area {:.3}",
            area_f.max(area_s)
        ),
    )
}

fn c6_small_n_optimality() -> Verdict {
    let mut matches = 0;
    for trial in 0..200u64 {
        let n = 4 + (trial as usize % 9);
        let dim = 2 + (trial as usize % 3);
        // separation ratio 4: centers 1.0 apart, radius 0.25
        let (rows, _) = common::separated_fixture(n, dim, 0.25, 1.0, 600 + trial);
        let got: Vec<bool> = cluster_rows(&common::points(&rows), ClusterMethod::KMeans, trial)
            .unwrap()
            .assignment
            .iter()
            .map(|&a| a == 1)
            .collect();
        let (best, best_w) = common::exhaustive_two_means(&rows);
        if common::same_partition(&got, &best) || (common::wss(&rows, &got) - best_w).abs() <= 1e-12 {
            matches += 1;
        }
    }
    verdict(
        matches >= 190,
        format!("{matches}/200 trials match the exhaustive optimum (need 190)"),
    )
}

fn c7_bench_scaling() -> Verdict {
    let cfg = BenchConfig {
        patch_counts: vec![64, 256, 1024, 4096],
        methods: vec![ClusterMethod::KMeans, ClusterMethod::Hierarchical],
        trials: 5,
        seed: 0,
        timeout_secs: Some(120.0),
        ..BenchConfig::default()
    };
    let report = cluster_bench(&cfg).unwrap();
    let km = report.slope(ClusterMethod::KMeans);
    let hc = report.slope(ClusterMethod::Hierarchical);
    let pass = km.is_some_and(|s| (0.5..=1.5).contains(&s)) && hc.is_some_and(|s| (1.5..=2.5).contains(&s));
    verdict(pass, format!("slopes: kmeans {km:.3?} (need 0.5..1.5), hierarchical {hc:.3?} (need 1.5..2.5)"))
}

fn c8_entropy() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut order_bad = 0;
    let mut identity_worst: f64 = 0.0;
    let mut equal_bad = 0;
    for i in 0..1000u64 {
        let k = rng.random_range(2..=32);
        let m = random_model(k, i).unwrap();
        let (a, b) = (h1(&m), h2(&m));
        let q_is_p = m.p() == m.q();
        if b > a + 1e-12 || ((a - b).abs() <= 1e-12 && !q_is_p) {
            order_bad += 1;
        }
        identity_worst = identity_worst.max(((a - b) - kl(&m)).abs());
        // the Q = P case of the same size must give equality
        let same = DiscreteJointModel::from_probs(m.p().to_vec(), m.p().to_vec()).unwrap();
        if (h1(&same) - h2(&same)).abs() > 1e-12 {
            equal_bad += 1;
        }
    }
    let mut outside = 0;
    for i in 0..50u64 {
        let m = random_model(8, 10_000 + i).unwrap();
        let est = monte_carlo_expectation(|o| m.p()[o].ln(), m.p(), 10_000, i).unwrap();
        if (est.mean - h1(&m)).abs() > 3.0 * est.stderr {
            outside += 1;
        }
    }
    verdict(
        order_bad == 0 && equal_bad == 0 && identity_worst <= 1e-12 && outside == 0,
        format!(
            "H2>H1 or spurious equality in {order_bad}/1000, Q=P inequality in {equal_bad}, \
             max |h1-h2-kl| {identity_worst:.1e}, MC outside 3 SE in {outside}/50"
        ),
    )
}

fn c9_metrics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad = 0;
    let mut harmonic_worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..400);
        let density_p = rng.random::<f64>();
        let density_g = rng.random::<f64>();
        let pred: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < density_p).collect();
        let gt: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < density_g).collect();
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&p, &g) in pred.iter().zip(&gt) {
            match (p, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let s = compute_metrics(&pred, &gt).unwrap();
        let (ppv, sen, dsc) = if tp + fp + fn_ == 0 {
            (1.0, 1.0, 1.0)
        } else {
            let r = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            (r(tp, tp + fp), r(tp, tp + fn_), r(2 * tp, 2 * tp + fp + fn_))
        };
        if (s.tp, s.fp, s.fn_) != (tp, fp, fn_) || s.ppv != ppv || s.sen != sen || s.dsc != dsc {
            bad += 1;
        }
        if tp > 0 {
            let harmonic = 2.0 * s.ppv * s.sen / (s.ppv + s.sen);
            harmonic_worst = harmonic_worst.max((harmonic - s.dsc).abs());
        }
    }
    verdict(
        bad == 0 && harmonic_worst <= 1e-12,
        format!("{bad}/1000 mismatches with pixel counting; max |DSC - harmonic(PPV, Sen)| {harmonic_worst:.1e}"),
    )
}

/// The desk-scale ablation shared by criteria 10 and 11.
fn ablation_config() -> AblationConfig {
    let net = NetConfig {
        base_channels: 4,
        depth: 2,
        convs_per_stage: 1,
        ..NetConfig::default()
    };
    let mut cfg = AblationConfig {
        split: SplitSpec {
            train: 10.0 / 12.0,
            val: 1.0 / 12.0,
            test: 1.0 / 12.0,
            labeled_fraction: 0.05,
            seed: 0,
        },
        seeds: vec![0, 1, 2],
        arms: Arm::ALL.to_vec(),
        ..AblationConfig::default()
    };
    cfg.pretrain.net = net;
    cfg.pretrain.train.epochs = 100;
    cfg.pretrain.train.learning_rate = 2e-3;
    cfg.finetune.net = net;
    cfg.finetune.train.epochs = 30;
    cfg.finetune.train.learning_rate = 1e-2;
    cfg.finetune.train.batch_size = 2;
    cfg
}

fn ablation_corpus() -> SyntheticConfig {
    SyntheticConfig {
        texture: Texture::Speckle,
        noise: 0.15,
        lesion_intensity: 0.55,
        ..SyntheticConfig::default()
    }
}

fn run_ablation(dir: &std::path::Path) -> (AblationReport, Vec<u8>, Vec<u8>) {
    let samples = synthetic_dataset(&ablation_corpus(), 360, 7).unwrap();
    let cfg = ablation_config();
    let report = ablate(&samples, &cfg).unwrap();
    let hash = mpsams::report::config_hash(&cfg).unwrap();
    let (a, b) = (dir.join("ablation.csv"), dir.join("ablation_seeds.csv"));
    report.write_csv(&a, Some(&hash)).unwrap();
    report.write_seed_csv(&b, Some(&hash)).unwrap();
    (report, std::fs::read(a).unwrap(), std::fs::read(b).unwrap())
}

struct AblationRuns {
    first: Option<(AblationReport, Vec<u8>, Vec<u8>)>,
}

fn c10_ablation(runs: &mut AblationRuns, dir: &std::path::Path) -> Verdict {
    let (report, _, _) = runs.first.get_or_insert_with(|| run_ablation(&dir.join("run1")));
    println!("{}", report.to_table());
    let mean = |arm| report.mean_dsc(arm);
    let (Some(base), Some(ams), Some(mps), Some(full)) =
        (mean(Arm::Base), mean(Arm::BaseAms), mean(Arm::BaseMps), mean(Arm::Full))
    else {
        return verdict(false, "an arm produced no test metrics");
    };
    let completed = report.arms.iter().all(|a| a.seeds.iter().all(|s| s.test.is_some()));
    let pass = completed
        && full - base >= -0.01
        && mps - base >= -0.01
        && ams - base >= -0.01
        && full - base >= 0.01;
    verdict(
        pass,
        format!(
            "mean test DSC base {base:.4}, base+AMS {ams:.4}, base+MPS {mps:.4}, full {full:.4}; \
             full-base {:+.4} (need >= +0.01), mps-base {:+.4}, ams-base {:+.4} (need >= -0.01)",
            full - base,
            mps - base,
            ams - base
        ),
    )
}

fn c11_reproducible(runs: &mut AblationRuns, dir: &std::path::Path) -> Verdict {
    let (_, a1, b1) = runs.first.get_or_insert_with(|| run_ablation(&dir.join("run1")));
    let (_, a2, b2) = run_ablation(&dir.join("run2"));
    verdict(
        *a1 == a2 && *b1 == b2,
        format!(
            "summary CSV {} bytes {}, per-seed CSV {} bytes {}",
            a2.len(),
            if *a1 == a2 { "identical" } else { "DIFFER" },
            b2.len(),
            if *b1 == b2 { "identical" } else { "DIFFER" }
        ),
    )
}

fn c12_round_trips(dir: &std::path::Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut patch_bad = 0;
    for _ in 0..100 {
        let patch = [1, 2, 4, 8, 16][rng.random_range(0..5)];
        // at least two patches: a single-patch grid is rejected
        let (rows, cols) = (rng.random_range(1..6), rng.random_range(2..6));
        let c = rng.random_range(1..4);
        let (h, w) = (rows * patch, cols * patch);
        let data: Vec<f32> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let img = ImageTensor::new(c, h, w, data).unwrap();
        let back = unpatchify(&patchify(&img, patch).unwrap()).unwrap();
        if back != img {
            patch_bad += 1;
        }
    }
    let mut ckpt_bad = 0;
    let configs = [
        NetConfig::default(),
        NetConfig {
            base_channels: 3,
            depth: 1,
            convs_per_stage: 1,
            nonlinearity: Nonlinearity::Tanh,
            ..NetConfig::default()
        },
        NetConfig {
            in_channels: 3,
            out_channels: 3,
            base_channels: 2,
            depth: 4,
            convs_per_stage: 3,
            nonlinearity: Nonlinearity::LeakyRelu,
            ..NetConfig::default()
        },
    ];
    for (i, cfg) in configs.iter().enumerate() {
        let w: ModelWeights = init_weights(cfg, i as u64).unwrap();
        let (p1, p2) = (dir.join(format!("a{i}.mpsw")), dir.join(format!("b{i}.mpsw")));
        write_checkpoint(&p1, &w).unwrap();
        let back = read_checkpoint(&p1).unwrap();
        write_checkpoint(&p2, &back).unwrap();
        let same_files = std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();
        let same_bytes = to_bytes(&from_bytes(&to_bytes(&w)).unwrap()) == to_bytes(&w);
        if !(same_files && same_bytes && back.tensors().eq(w.tensors())) {
            ckpt_bad += 1;
        }
    }
    verdict(
        patch_bad == 0 && ckpt_bad == 0,
        format!("patchify/unpatchify failures {patch_bad}/100; checkpoint mismatches {ckpt_bad}/{}", configs.len()),
    )
}

const TITLES: [&str; 12] = [
    "schedule exactness",
    "mask-count law",
    "gradient correctness",
    "masked-only loss support",
    "MPS lesion recovery",
    "clustering optimality at small N",
    "cluster bench scaling",
    "entropy ordering",
    "metrics oracle",
    "ablation direction",
    "reproducibility",
    "round-trip and format",
];

fn main() {
    let selected: Vec<usize> = match std::env::var("MPSAMS_ACCEPTANCE") {
        Ok(list) if !list.trim().is_empty() => list
            .split(',')
            .map(|s| s.trim().parse().expect("MPSAMS_ACCEPTANCE holds criterion numbers"))
            .collect(),
        _ => (1..=12).collect(),
    };
    let dir = tempfile::tempdir().unwrap();
    let mut runs = AblationRuns { first: None };
    let mut failed = Vec::new();
    for id in 1..=12 {
        if !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = match id {
            1 => c1_schedule(),
            2 => c2_mask_count(),
            3 => c3_gradients(),
            4 => c4_masked_only(),
            5 => c5_lesion_recovery(),
            6 => c6_small_n_optimality(),
            7 => c7_bench_scaling(),
            8 => c8_entropy(),
            9 => c9_metrics(),
            10 => c10_ablation(&mut runs, dir.path()),
            11 => c11_reproducible(&mut runs, dir.path()),
            _ => c12_round_trips(dir.path()),
        };
        println!(
            "criterion {id:>2} {} {}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            TITLES[id - 1],
            v.detail,
            start.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} selected criteria passed", selected.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
