//! Experiment driver: configuration, training loop, sweeps, repeated runs,
//! cross-dataset tests, throughput benchmarks and report tables.

mod bench;
mod config;
mod eval;
mod experiments;
mod report;
mod train;

pub use bench::{bench_models, bench_table, benchmark_fps, BenchOptions, BenchRow};
pub use config::{Augmentation, DataSource, ExperimentConfig, Preset, DEFAULT_LR, LR_GRID};
pub use eval::{cross_test, evaluate_samples, load_checkpoints, CrossCell, CrossMatrix};
pub use experiments::{
    derive_seeds, lr_sweep, mean_std, run_repeats, run_repeats_with_seeds, sweep_csv, Phase, Quantity, RepeatRow,
    RepeatTable, SweepRow,
};
pub use report::collect_report;
pub use train::{
    image_batch, predict_planes, prepare_data, run_training, score, target_batch, train, CurveSummary, EpochStats,
    RunRecord, RunStatus, TrainedRun, TrainingData, DIVERGENCE_LOGIT, DIVERGENCE_LOSS, DIVERGENCE_PATIENCE,
    LOG_HEADER,
};
