//! `mpsams`: data generation, pretraining, finetuning, ablation and report
//! commands over the core library.

mod commands;
mod config;
mod fail;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Run;
use crate::fail::CliError;
use crate::plot::PlotSpec;

/// Environment variable that replaces the default output root (`runs`).
const OUT_ENV: &str = "MPSAMS_OUT";

#[derive(Parser)]
#[command(name = "mpsams", version, about = "Masked-patch-selection pretraining experiments")]
struct Cli {
    /// Log progress and the resolved config to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file; keys not given keep their defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override a config value by dotted path, e.g. `pretrain.train.epochs=5`.
    /// Values are read as JSON, falling back to a plain string. Repeatable;
    /// later overrides win, and all of them win over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Root seed; every random stream in the run is derived from it.
    #[arg(long)]
    seed: Option<u64>,

    /// Cap on worker threads (default: one per core).
    #[arg(long)]
    workers: Option<usize>,

    /// Output directory (default: `$MPSAMS_OUT/<command>`, or `runs/<command>`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image/mask dataset with a manifest.
    GenData(Common),
    /// Masked-image-modeling pretraining; writes checkpoints and a loss CSV.
    Pretrain(Common),
    /// Segmentation finetuning, optionally from a pretrained checkpoint.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pretrained checkpoint whose encoder initializes the network.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Four-arm ablation over repeated seeds; writes report CSVs and a table.
    Ablate(Common),
    /// Runtime and lesion recall of the clustering methods across sizes.
    ClusterBench(Common),
    /// Entropy ordering over generated discrete models.
    EntropyCheck(Common),
    /// Test DSC as a function of pretraining length.
    Sweep(Common),
    /// Render a report CSV as an SVG line chart.
    Plot {
        /// Input CSV (comment lines starting with `#` are skipped).
        csv: PathBuf,
        /// Output SVG path.
        out_svg: PathBuf,
        /// x column (default: first numeric column).
        #[arg(long)]
        x: Option<String>,
        /// y columns, comma separated (default: every other numeric column).
        #[arg(long, value_delimiter = ',')]
        y: Vec<String>,
        /// Column whose values split rows into separate lines.
        #[arg(long)]
        group: Option<String>,
        /// Log-log axes.
        #[arg(long)]
        log: bool,
        #[arg(long)]
        title: Option<String>,
    },
}

fn out_dir(common: &Common, name: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(name)
    })
}

fn prepare(common: &Common, name: &str) -> Result<Run, CliError> {
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(CliError::config("--workers must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot size the worker pool: {e}")))?;
    }
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = config::resolve(common.config.as_deref(), &overrides)?;
    Run::new(config, out_dir(common, name))
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(c) => commands::gen_data(&prepare(&c, "gen-data")?),
        Command::Pretrain(c) => commands::pretrain(&prepare(&c, "pretrain")?),
        Command::Finetune { common, checkpoint } => {
            commands::finetune_cmd(&prepare(&common, "finetune")?, checkpoint.as_deref())
        }
        Command::Ablate(c) => commands::ablate_cmd(&prepare(&c, "ablate")?),
        Command::ClusterBench(c) => commands::cluster_bench_cmd(&prepare(&c, "cluster-bench")?),
        Command::EntropyCheck(c) => commands::entropy_check(&prepare(&c, "entropy-check")?),
        Command::Sweep(c) => commands::sweep(&prepare(&c, "sweep")?),
        Command::Plot {
            csv,
            out_svg,
            x,
            y,
            group,
            log,
            title,
        } => commands::plot_cmd(
            Path::new(&csv),
            Path::new(&out_svg),
            &PlotSpec { x, y, group, log, title },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code as u8)
        }
    }
}
