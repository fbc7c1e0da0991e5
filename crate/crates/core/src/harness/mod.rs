//! Training loop, evaluation, experiments and report emission.

pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod report;
pub mod train;

pub use experiment::{
    lambda_sweep, prepare, run_prepared, strategy_compare, BenchmarkConfig, MeanMetrics, StrategyRow, SweepRow,
};
pub use metrics::{evaluate, EvalReport};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome};
