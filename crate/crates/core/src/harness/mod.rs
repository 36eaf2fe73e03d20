//! Experiment orchestration: configuration, training with best-validation
//! selection, evaluation and report files.

mod config;
mod run;
mod train;

pub use config::{ExperimentConfig, ModelKind, SplitMode, SPLIT_RATIOS};
pub use run::{
    clique_counts, emit_report, evaluate_checkpoint, execute, fresh_run_dir, load_graph, load_record, output_root,
    permutation_rate, prepare_split, render_summary, run_experiment, test_elapsed_times, train_loop, Checkpoint,
    DatasetStats, HorizonRow, PredictionRow, PrefixAccuracy, RunOutcome, RunRecord, SplitName, OUTPUT_ROOT_ENV,
};
pub use train::{evaluate, fit, score_predictions, EpochRecord, FitResult, Prepared, TrainOptions};
