use std::path::Path;
use std::process::{Command, Output};

fn mpsams() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mpsams"));
    c.env_remove("MPSAMS_OUT").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    mpsams().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small network and corpus so training commands finish in seconds.
const TINY: &[&str] = &[
    "--set",
    "data.synthetic.image_size=32",
    "--set",
    "data.synthetic.lesion_radius=[2,4]",
    "--set",
    "pretrain.net.base_channels=2",
    "--set",
    "pretrain.net.depth=1",
    "--set",
    "finetune.net.base_channels=2",
    "--set",
    "finetune.net.depth=1",
    "--set",
    "pretrain.train.epochs=1",
    "--set",
    "finetune.train.epochs=1",
];

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(TINY.iter().copied()).collect()
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn version_prints_build_version() {
    let o = run(&["--version"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn help_lists_every_flag() {
    for cmd in ["gen-data", "pretrain", "finetune", "ablate", "cluster-bench", "entropy-check", "sweep"] {
        let o = run(&[cmd, "--help"]);
        assert!(o.status.success(), "{cmd}");
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in ["--config", "--set", "--seed", "--workers", "--out", "--verbose"] {
            assert!(text.contains(flag), "{cmd} --help misses {flag}");
        }
    }
    let text = String::from_utf8_lossy(&run(&["finetune", "--help"]).stdout).into_owned();
    assert!(text.contains("--checkpoint"));
    let text = String::from_utf8_lossy(&run(&["plot", "--help"]).stdout).into_owned();
    for flag in ["--x", "--y", "--group", "--log", "--title"] {
        assert!(text.contains(flag), "plot --help misses {flag}");
    }
}

#[test]
fn unknown_key_exits_with_config_code_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&["pretrain", "--out", out.to_str().unwrap(), "--set", "pretrain.train.lerning_rate=0.1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=config code=2 "), "{err}");
    assert!(err.contains("pretrain.train") && err.contains("lerning_rate"), "{err}");
}

#[test]
fn unknown_key_in_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"split": {"train": 0.8, "holdout": 0.2}}"#).unwrap();
    let o = run(&["ablate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("split") && stderr(&o).contains("holdout"), "{}", stderr(&o));
}

#[test]
fn invalid_value_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pretrain", "--out", dir.path().to_str().unwrap(), "--set", "pretrain.train.batch_size=0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "finetune",
        "--out",
        dir.path().join("o").to_str().unwrap(),
        "--set",
        &format!("data.manifest=\"{}\"", dir.path().join("none.json").display()),
    ]);
    assert!(!o.status.success());
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);
}

#[test]
fn plot_two_rows_gives_one_polyline() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    std::fs::write(&csv, "# config_hash=abc\nepoch,loss\n1,0.5\n2,0.25\n").unwrap();
    let svg = dir.path().join("c.svg");
    let o = run(&["plot", csv.to_str().unwrap(), svg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
    assert_eq!(text.matches("<polyline").count(), 1);
}

#[test]
fn ablate_one_seed_gives_four_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let mut args = with_tiny(&["ablate", "--seed", "3", "--out"]);
        let out_s = out.to_str().unwrap().to_string();
        args.insert(4, &out_s);
        args.extend(["--set", "data.count=300", "--set", "ablation.repeats=1"]);
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let rows = data_rows(&a.join("ablation.csv"));
    assert_eq!(rows.len(), 4);
    for (row, label) in rows.iter().zip(["base,", "base+AMS,", "base+MPS,", "base+AMS+MPS,"]) {
        assert!(row.starts_with(label), "{row}");
    }
    for name in ["ablation.csv", "ablation_seeds.csv", "config.json"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs between runs"
        );
    }
    let first = std::fs::read_to_string(a.join("ablation.csv")).unwrap();
    assert!(first.starts_with("# config_hash="));
}

#[test]
fn pretrain_then_finetune_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut gen = with_tiny(&["gen-data", "--out"]);
    let data_s = data.to_str().unwrap().to_string();
    gen.insert(2, &data_s);
    gen.extend(["--set", "data.count=20"]);
    assert!(run(&gen).status.success());

    let manifest = format!("data.manifest=\"{}\"", data.join("manifest.json").display());
    let pre = dir.path().join("pre");
    let pre_s = pre.to_str().unwrap().to_string();
    let mut args = with_tiny(&["pretrain", "--out", &pre_s, "--set", &manifest]);
    args.extend(["--set", "output.checkpoint_every=1"]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(pre.join("pretrain.mpsw").exists());
    assert!(pre.join("checkpoints/epoch_0001.mpsw").exists());
    assert_eq!(data_rows(&pre.join("loss.csv")).len(), 1);

    let fine = dir.path().join("fine");
    let fine_s = fine.to_str().unwrap().to_string();
    let ckpt = pre.join("pretrain.mpsw");
    let ckpt_s = ckpt.to_str().unwrap().to_string();
    let args = with_tiny(&["finetune", "--out", &fine_s, "--checkpoint", &ckpt_s, "--set", &manifest]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fine.join("best.mpsw").exists());
    let test = data_rows(&fine.join("test_metrics.csv"));
    assert_eq!(test.len(), 1);
    assert!(test[0].starts_with("test,"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpsams()
        .env("MPSAMS_OUT", dir.path())
        .args(["entropy-check", "--set", "entropy.models=4"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&dir.path().join("entropy-check/entropy.csv")).len(), 4);
}

#[test]
fn cli_seed_beats_file_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 1, "entropy": {"models": 2}}"#).unwrap();
    let out = dir.path().join("o");
    let o = run(&["entropy-check", "--config", cfg.to_str().unwrap(), "--seed", "42", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let snap: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(snap["seed"], 42);
    assert_eq!(snap["entropy"]["models"], 2);
}
