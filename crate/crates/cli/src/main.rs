use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dlif_core::data::{generate_dataset, Dataset, DatasetSpec};
use dlif_core::gradsuite::{run_encoder_check, run_suite, DEFAULT_STEP, DEFAULT_TOL, ENCODER_STEP};
use dlif_core::kv;
use dlif_core::metrics::export_embeddings;
use dlif_core::train::{
    ablation_cells, embeddings, evaluate, probe, run_training_with, Axis, Checkpoint, RunOptions, Space, TrainConfig,
    HISTORY_FILE,
};

const SEED_ENV: &str = "DLIF_SEED";

#[derive(Parser)]
#[command(name = "dlif", version, about = "Disentangled liveness/identity training on synthetic face proxies")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Clone)]
struct ConfigArgs {
    /// `key = value` file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single key, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Liveness,
    Identity,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    #[value(name = "sc_flow", alias = "sc-flow")]
    ScFlow,
    Contrast,
    Components,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic source/target dataset.
    GenData {
        /// Dataset spec file; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both branches and keep the best and last checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset root containing `source/` (and `target/`).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from `<out>/last` when present.
        #[arg(long)]
        resume: bool,
        /// Evaluate the selected checkpoint on `<data>/target` at the end.
        #[arg(long)]
        target: bool,
    },
    /// Score a dataset with a checkpoint at its calibrated threshold.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory, or its `manifest.txt`.
        #[arg(long, alias = "manifest")]
        data: PathBuf,
        /// Report file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the disentanglement probes.
        #[arg(long)]
        probe: bool,
    },
    /// Finite-difference check of every primitive and loss.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write features of a dataset as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory, or its `manifest.txt`.
        #[arg(long, alias = "manifest")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SpaceArg::Liveness)]
        space: SpaceArg,
    },
    /// Train every cell of an ablation axis.
    Ablate {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds; each cell runs once per seed.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Run cells as concurrent child processes.
        #[arg(long)]
        parallel: bool,
    },
}

fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => TrainConfig::default(),
    };
    let mut pairs = args.overrides.iter().map(|o| kv::parse_override(o)).collect::<dlif_core::Result<Vec<_>>>()?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        pairs.push(("seed".into(), seed));
    }
    cfg.apply(&pairs)?;
    Ok(cfg)
}

fn resolve_spec(spec: &Option<PathBuf>, overrides: &[String]) -> Result<DatasetSpec> {
    let mut pairs = match spec {
        Some(p) => kv::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => Vec::new(),
    };
    let mut extra = overrides.iter().map(|o| kv::parse_override(o)).collect::<dlif_core::Result<Vec<_>>>()?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        extra.push(("seed".into(), seed));
    }
    for (k, v) in extra {
        match pairs.iter_mut().find(|(key, _)| *key == k) {
            Some(slot) => slot.1 = v,
            None => pairs.push((k, v)),
        }
    }
    Ok(DatasetSpec::from_pairs(&pairs)?)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let dir = if path.is_file() { path.parent().unwrap_or(Path::new(".")) } else { path };
    Ok(Dataset::load(dir)?)
}

fn train(cfg: &TrainConfig, data: &Path, out: &Path, resume: bool, target: bool) -> Result<()> {
    let opts = RunOptions { resume, final_target_eval: target, ..RunOptions::default() };
    let summary = run_training_with(cfg, data, out, &opts, |rows| {
        for r in rows {
            eprintln!("epoch {:>3} {:<10} AUC {:.4} HTER {:.4}", r.epoch, r.split.name(), r.auc, r.hter);
        }
    })?;
    if let Some(b) = summary.best {
        println!("best epoch {} AUC {:.4} HTER {:.4}", b.epoch, b.auc, b.hter);
    }
    if let Some(t) = summary.target {
        println!("target AUC {:.4} HTER {:.4}", t.auc, t.hter);
    }
    Ok(())
}

fn ablate(axis: AxisArg, args: &ConfigArgs, data: &Path, out: &Path, seeds: &str, parallel: bool) -> Result<()> {
    let axis = match axis {
        AxisArg::ScFlow => Axis::ScFlow,
        AxisArg::Contrast => Axis::Contrast,
        AxisArg::Components => Axis::Components,
    };
    let seeds: Vec<u64> = kv::parse_list("seeds", seeds)?;
    if seeds.is_empty() {
        bail!("--seeds needs at least one seed");
    }
    let base = resolve_config(args)?;
    let mut cells = Vec::new();
    for (name, overrides) in ablation_cells(axis) {
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.apply(&overrides)?;
            cfg.seed = seed;
            cells.push((out.join(&name).join(format!("seed{seed}")), cfg));
        }
    }
    fs::create_dir_all(out)?;
    if parallel {
        let exe = std::env::current_exe()?;
        let mut children = Vec::new();
        for (dir, cfg) in &cells {
            fs::create_dir_all(dir)?;
            let cfg_path = dir.join("cell_config.txt");
            fs::write(&cfg_path, cfg.to_text())?;
            let child = Command::new(&exe)
                .arg("train")
                .arg("--config")
                .arg(&cfg_path)
                .arg("--data")
                .arg(data)
                .arg("--out")
                .arg(dir)
                .arg("--target")
                .env_remove(SEED_ENV)
                .spawn()?;
            children.push((dir.clone(), child));
        }
        for (dir, mut child) in children {
            if !child.wait()?.success() {
                bail!("ablation cell {} failed", dir.display());
            }
        }
    } else {
        for (dir, cfg) in &cells {
            eprintln!("cell {}", dir.display());
            train(cfg, data, dir, false, true)?;
        }
    }
    let mut table = String::from("cell, seed, target_AUC, target_HTER, history\n");
    for (dir, cfg) in &cells {
        let report = kv::parse(&fs::read_to_string(dir.join(dlif_core::train::FINAL_TARGET_FILE))?)?;
        let get = |k: &str| report.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone()).unwrap_or_default();
        let cell = dir.parent().and_then(Path::file_name).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        table.push_str(&format!(
            "{cell}, {}, {}, {}, {}\n",
            cfg.seed,
            get("auc"),
            get("hter"),
            dir.join(HISTORY_FILE).display()
        ));
    }
    fs::write(out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::GenData { spec, overrides, out } => {
            let spec = resolve_spec(&spec, &overrides)?;
            generate_dataset(&spec, &out)?;
            println!("wrote dataset to {}", out.display());
        }
        Cmd::Train { config, data, out, resume, target } => {
            let cfg = resolve_config(&config)?;
            train(&cfg, &data, &out, resume, target)?;
        }
        Cmd::Eval { checkpoint, data, out, probe: with_probe } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let rows: Vec<usize> = (0..ds.len()).collect();
            let mut text = evaluate(&ck.models, &ds, &rows, ck.state.threshold)?.to_text();
            if with_probe {
                text.push_str(&probe(&ck.models, &ds, &rows)?.to_text());
            }
            match out {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Cmd::Gradcheck { step, tol, seed } => {
            let mut reports = run_suite(seed, step, tol)?;
            reports.push(run_encoder_check(seed, ENCODER_STEP.min(step), tol)?);
            let mut failed = 0;
            for r in &reports {
                println!("{}", r.line());
                failed += usize::from(!r.report.passed());
            }
            if failed > 0 {
                bail!("{failed} of {} gradient checks failed", reports.len());
            }
        }
        Cmd::ExportEmbeddings { checkpoint, data, out, space } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let rows: Vec<usize> = (0..ds.len()).collect();
            let space = match space {
                SpaceArg::Liveness => Space::Liveness,
                SpaceArg::Identity => Space::Identity,
            };
            export_embeddings(&embeddings(&ck.models, &ds, &rows, space)?, &out)?;
        }
        Cmd::Ablate { axis, config, data, out, seeds, parallel } => {
            ablate(axis, &config, &data, &out, &seeds, parallel)?
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(e.downcast_ref::<dlif_core::Error>(), Some(dlif_core::Error::Config(_)));
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
