//! Two-branch adversarial training: configuration, optimizer, the
//! alternating step, checkpoints and the epoch loop.

mod ablation;
mod adam;
mod checkpoint;
mod config;
mod eval;
mod run;
mod step;

pub use ablation::{ablation_cells, baseline_overrides, Axis, Overrides};
pub use adam::{adam_update, Adam, BETA1, BETA2, EPSILON};
pub use checkpoint::{
    BestRecord, Checkpoint, TrainState, CONFIG_FILE, EXACT_FILE, STATE_FILE, TENSOR_DIR, WEIGHTS_MANIFEST,
};
pub use config::{Selection, TrainConfig};
pub use eval::{embeddings, evaluate, features, probe, score_rows, EvalReport, Space};
pub use run::{
    run_training, run_training_with, HistoryRow, RunOptions, RunSummary, SourceSplit, Split, BEST_DIR,
    FINAL_TARGET_FILE, HISTORY_FILE, LAST_DIR, LOSS_FILE, RESOLVED_CONFIG,
};
pub use step::{train_step, train_step_observed, Models, Optimizers, StepLosses, LOSS_COLUMNS};
