use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::checkpoint::{BestRecord, Checkpoint, TrainState};
use super::config::{Selection, TrainConfig};
use super::eval::{evaluate, score_rows, EvalReport};
use super::step::{train_step, Models, Optimizers, StepLosses, LOSS_COLUMNS};
use crate::data::{stream_rng, BatchSampler, Dataset, SOURCE_DIR, TARGET_DIR};
use crate::error::{Error, Result};
use crate::metrics::eer_threshold;

pub const BEST_DIR: &str = "best";
pub const LAST_DIR: &str = "last";
pub const HISTORY_FILE: &str = "history.txt";
pub const LOSS_FILE: &str = "losses.txt";
pub const RESOLVED_CONFIG: &str = "config.txt";
pub const FINAL_TARGET_FILE: &str = "target_eval.txt";
const HISTORY_HEADER: &str = "epoch, split, HTER, AUC, threshold";

/// Seed streams, kept apart from the generator's.
const STREAM_SPLIT: u64 = 1;
const STREAM_CALIBRATION: u64 = 2;
const STREAM_TRAIN: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    SourceVal,
    Target,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::SourceVal => "source_val",
            Self::Target => "target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: Split,
    pub hter: f64,
    pub auc: f64,
    pub threshold: f64,
}

impl HistoryRow {
    pub fn to_line(&self) -> String {
        format!("{}, {}, {}, {}, {}", self.epoch, self.split.name(), self.hter, self.auc, self.threshold)
    }
}

/// Source rows split by identity into training and held-out validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub calibration: Vec<usize>,
    /// Training identities in discriminator class order.
    pub train_identities: Vec<usize>,
}

impl SourceSplit {
    /// Holds out `val_fraction` of each domain's identities (at least one
    /// when the fraction is positive).
    pub fn new(ds: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        let mut by_domain: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for e in &ds.entries {
            let ids = by_domain.entry(e.domain_tag).or_default();
            if !ids.contains(&e.identity_id) {
                ids.push(e.identity_id);
            }
        }
        let mut rng = stream_rng(cfg.seed, STREAM_SPLIT);
        let mut held = Vec::new();
        for ids in by_domain.values_mut() {
            ids.sort_unstable();
            ids.shuffle(&mut rng);
            let n = if cfg.val_fraction > 0.0 {
                ((ids.len() as f64 * cfg.val_fraction).round() as usize).max(1)
            } else {
                0
            };
            if n >= ids.len() {
                return Err(Error::Config(format!("val_fraction {} leaves no training identities", cfg.val_fraction)));
            }
            held.extend_from_slice(&ids[..n]);
        }
        let (val, train): (Vec<usize>, Vec<usize>) =
            (0..ds.len()).partition(|&r| held.contains(&ds.entries[r].identity_id));
        let mut train_identities: Vec<usize> = train.iter().map(|&r| ds.entries[r].identity_id).collect();
        train_identities.sort_unstable();
        train_identities.dedup();
        let mut calibration = train.clone();
        calibration.shuffle(&mut stream_rng(cfg.seed, STREAM_CALIBRATION));
        calibration.truncate(cfg.calibration_samples.max(2));
        calibration.sort_unstable();
        Ok(Self { train, val, calibration, train_identities })
    }
}

/// Controls for [`run_training`] beyond the configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from `out/last` when it exists.
    pub resume: bool,
    /// Stop once this many epochs are complete.
    pub stop_after: Option<usize>,
    /// Evaluate the selected checkpoint on the target split at the end.
    pub final_target_eval: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub epochs_completed: usize,
    pub best: Option<BestRecord>,
    pub history: Vec<HistoryRow>,
    /// Target metrics of the selected checkpoint.
    pub target: Option<EvalReport>,
    pub out: PathBuf,
}

fn truncate_log(path: &Path, header: &str, keep: impl Fn(u64) -> bool) -> Result<()> {
    let text = fs::read_to_string(path).unwrap_or_default();
    let mut out = format!("{header}\n");
    for line in text.lines().skip(1) {
        let key: Option<u64> = line.split(',').next().and_then(|v| v.trim().parse().ok());
        if key.is_some_and(&keep) {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn append(path: &Path, text: &str) -> Result<()> {
    fs::OpenOptions::new().append(true).create(true).open(path)?.write_all(text.as_bytes())?;
    Ok(())
}

fn history_rows(path: &Path) -> Result<Vec<HistoryRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Format(format!("bad history line `{line}`"));
        if f.len() != 5 {
            return Err(bad());
        }
        rows.push(HistoryRow {
            epoch: f[0].parse().map_err(|_| bad())?,
            split: match f[1] {
                "source_val" => Split::SourceVal,
                "target" => Split::Target,
                _ => return Err(bad()),
            },
            hter: f[2].parse().map_err(|_| bad())?,
            auc: f[3].parse().map_err(|_| bad())?,
            threshold: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Trains on `data/source`, selecting checkpoints on held-out source
/// identities or on `data/target`, and writes logs and checkpoints to `out`.
pub fn run_training(cfg: &TrainConfig, data: &Path, out: &Path, opts: &RunOptions) -> Result<RunSummary> {
    run_training_with(cfg, data, out, opts, |_| {})
}

/// [`run_training`] with a callback after each epoch's evaluation.
pub fn run_training_with(
    cfg: &TrainConfig,
    data: &Path,
    out: &Path,
    opts: &RunOptions,
    mut on_epoch: impl FnMut(&[HistoryRow]),
) -> Result<RunSummary> {
    cfg.validate()?;
    let source = Dataset::load(data.join(SOURCE_DIR))?;
    let needs_target = cfg.selection == Selection::TargetEval || opts.final_target_eval;
    let target = if needs_target { Some(Dataset::load(data.join(TARGET_DIR))?) } else { None };
    let split = SourceSplit::new(&source, cfg)?;
    if cfg.selection == Selection::SourceVal && split.val.is_empty() {
        return Err(Error::Config("source_val selection needs val_fraction > 0".into()));
    }
    let sampler = BatchSampler::new(&source, &split.train, cfg.sampler())?;
    let classes: BTreeMap<usize, usize> = split.train_identities.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let steps =
        if cfg.steps_per_epoch > 0 { cfg.steps_per_epoch } else { (split.train.len() / sampler.batch_size()).max(1) };

    fs::create_dir_all(out)?;
    fs::write(out.join(RESOLVED_CONFIG), cfg.to_text())?;
    let last = out.join(LAST_DIR);
    let mut ck = if opts.resume && last.exists() {
        let ck = Checkpoint::load(&last)?;
        if ck.config != *cfg {
            return Err(Error::Config("resume configuration differs from the checkpoint's".into()));
        }
        ck
    } else {
        let models = Models::new(cfg, split.train_identities.len())?;
        let optimizers = Optimizers::new(&models, cfg.weight_decay);
        Checkpoint {
            config: cfg.clone(),
            models,
            opts: optimizers,
            state: TrainState {
                epoch: 0,
                step: 0,
                threshold: 0.5,
                best: None,
                rng: stream_rng(cfg.seed, STREAM_TRAIN),
                identities: split.train_identities.clone(),
            },
        }
    };
    let done = ck.state.epoch;
    let step = ck.state.step;
    truncate_log(&out.join(HISTORY_FILE), HISTORY_HEADER, |e| (e as usize) < done)?;
    truncate_log(&out.join(LOSS_FILE), &LOSS_COLUMNS.join(", "), |s| s <= step)?;

    let end = opts.stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));
    for epoch in ck.state.epoch..end {
        let lr = cfg.lr_at(epoch);
        let mut log = String::new();
        for _ in 0..steps {
            let batch = sampler.sample(&mut ck.state.rng)?;
            let ids: Vec<usize> = batch.identities.iter().map(|i| classes[i]).collect();
            let mut l: StepLosses = train_step(&mut ck.models, &mut ck.opts, cfg, &batch, &ids, lr, &mut ck.state.rng)?;
            ck.state.step += 1;
            l.step = ck.state.step;
            log.push_str(&l.to_row());
            log.push('\n');
        }
        append(&out.join(LOSS_FILE), &log)?;

        let calib = score_rows(&ck.models, &source, &split.calibration)?;
        let threshold = eer_threshold(&calib).0;
        ck.state.threshold = threshold;
        let mut rows = Vec::new();
        if !split.val.is_empty() {
            let r = evaluate(&ck.models, &source, &split.val, threshold)?;
            rows.push(HistoryRow { epoch, split: Split::SourceVal, hter: r.hter, auc: r.auc, threshold });
        }
        if cfg.selection == Selection::TargetEval {
            let t = target.as_ref().expect("loaded for target selection");
            let all: Vec<usize> = (0..t.len()).collect();
            let r = evaluate(&ck.models, t, &all, threshold)?;
            rows.push(HistoryRow { epoch, split: Split::Target, hter: r.hter, auc: r.auc, threshold });
        }
        append(&out.join(HISTORY_FILE), &rows.iter().map(|r| r.to_line() + "\n").collect::<String>())?;
        on_epoch(&rows);

        let selected = match cfg.selection {
            Selection::SourceVal => Split::SourceVal,
            Selection::TargetEval => Split::Target,
        };
        let sel = rows.iter().find(|r| r.split == selected).expect("selection split evaluated");
        let candidate = BestRecord { epoch, auc: sel.auc, hter: sel.hter };
        ck.state.epoch = epoch + 1;
        let improved = ck.state.best.is_none_or(|b| b.improved_by(&candidate));
        if improved {
            ck.state.best = Some(candidate);
            ck.save(out.join(BEST_DIR))?;
        }
        ck.save(&last)?;
    }

    let mut target_report = None;
    if opts.final_target_eval && out.join(BEST_DIR).exists() {
        let best = Checkpoint::load(out.join(BEST_DIR))?;
        let t = target.as_ref().expect("loaded for final evaluation");
        let all: Vec<usize> = (0..t.len()).collect();
        let r = evaluate(&best.models, t, &all, best.state.threshold)?;
        fs::write(out.join(FINAL_TARGET_FILE), r.to_text())?;
        target_report = Some(r);
    }
    Ok(RunSummary {
        epochs_completed: ck.state.epoch,
        best: ck.state.best,
        history: history_rows(&out.join(HISTORY_FILE))?,
        target: target_report,
        out: out.to_path_buf(),
    })
}
