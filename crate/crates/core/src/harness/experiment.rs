//! Synthetic benchmark runs: one seed end to end, the λ sweep, and the
//! weighting-strategy comparison.

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport};
use super::train::{train, TrainConfig, TrainOutcome};
use crate::dataset::{stratified_indices, Dataset};
use crate::domain::{ExpressionClass, KnowledgeMatrix, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::ingest::FrameQuality;
use crate::knowledge::{
    aggregate_knowledge, compute_dataset_knowledge, filter_reliable_frames, scale_for_loss, EmptyClassPolicy,
    MidpointPolicy, DEFAULT_THETA,
};
use crate::labeling::{pos_weights, PosWeightSpec, PosWeightStrategy};
use crate::loss::AuReduction;
use crate::synth::{generate_dataset, SynthSpec};

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

pub fn default_lambda_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub synth: SynthSpec,
    pub test_fraction: f64,
    pub theta: f64,
    pub midpoint: MidpointPolicy,
    pub train: TrainConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            test_fraction: 0.2,
            theta: DEFAULT_THETA,
            midpoint: MidpointPolicy::General,
            train: TrainConfig {
                au_reduction: AuReduction::Samples,
                hidden: vec![64],
                ..TrainConfig::default()
            },
        }
    }
}

/// One seed's data and the knowledge extracted from its training split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub dataset_knowledge: KnowledgeMatrix,
    pub knowledge: KnowledgeMatrix,
}

/// Generates the data for `seed`, splits it, and runs knowledge extraction
/// on the training clips only (one frame per clip, one-hot predictions).
pub fn prepare(bench: &BenchmarkConfig, seed: u64) -> Result<Prepared> {
    let spec = SynthSpec {
        seed,
        ..bench.synth.clone()
    };
    let synth = generate_dataset(&spec)?;
    let (train_idx, test_idx) = stratified_indices(&synth.data.labels, bench.test_fraction, seed)?;
    let frames = synth.frame_records();
    let preds = synth.one_hot_predictions();
    let train_frames: Vec<_> = train_idx.iter().map(|&i| frames[i].clone()).collect();
    let train_preds: Vec<_> = train_idx.iter().map(|&i| preds[i].clone()).collect();

    let reliable = filter_reliable_frames(&format!("synth-{seed}"), &train_preds, bench.theta)?;
    let dataset_knowledge = compute_dataset_knowledge(
        &train_frames,
        &reliable,
        &FrameQuality::default(),
        EmptyClassPolicy::Reject,
    )?;
    let aggregate = aggregate_knowledge(std::slice::from_ref(&dataset_knowledge), bench.midpoint)?;
    Ok(Prepared {
        seed,
        train: synth.data.select(&train_idx),
        test: synth.data.select(&test_idx),
        dataset_knowledge,
        knowledge: scale_for_loss(&aggregate)?,
    })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub lambda: f64,
    pub strategy: PosWeightStrategy,
    pub pos_weights: PosWeightSpec,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Trains on the prepared split with `cfg` (its seed is replaced by the
/// data seed) and evaluates on the held-out half.
pub fn run_prepared(prepared: &Prepared, cfg: &TrainConfig) -> Result<RunResult> {
    let cfg = TrainConfig {
        seed: prepared.seed,
        ..cfg.clone()
    };
    let pw = pos_weights(cfg.strategy, &prepared.train.labels)?;
    let outcome = train(&cfg, &prepared.train, None, &prepared.knowledge, &pw)?;
    if let Some(reason) = &outcome.aborted {
        return Err(Error::NonFinite(reason.clone()));
    }
    let report = evaluate(&outcome.params, &prepared.test)?;
    Ok(RunResult {
        seed: prepared.seed,
        lambda: cfg.lambda,
        strategy: cfg.strategy,
        pos_weights: pw,
        outcome,
        report,
    })
}

/// Seed-averaged metrics for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub war: f64,
    pub uar: f64,
    /// Mean over the seeds where the class had test samples.
    pub recalls: [Option<f64>; NUM_EXPRESSIONS],
    pub minor_recall: Option<f64>,
    pub seeds: usize,
}

impl MeanMetrics {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> Self {
        let reports: Vec<&EvalReport> = reports.into_iter().collect();
        let n = reports.len().max(1) as f64;
        let mean_of = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let mut recalls = [None; NUM_EXPRESSIONS];
        for (c, r) in recalls.iter_mut().enumerate() {
            *r = mean_of(reports.iter().filter_map(|rep| rep.per_class_recall[c]).collect());
        }
        Self {
            war: reports.iter().map(|r| r.war).sum::<f64>() / n,
            uar: reports.iter().map(|r| r.uar).sum::<f64>() / n,
            recalls,
            minor_recall: mean_of(reports.iter().filter_map(|r| r.minor_recall()).collect()),
            seeds: reports.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub metrics: MeanMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: PosWeightStrategy,
    pub lambda: f64,
    pub metrics: MeanMetrics,
    /// True when every major-class pos-weight row was all ones on every seed.
    pub major_rows_all_ones: bool,
}

#[cfg(feature = "parallel")]
fn run_jobs<T, F>(jobs: Vec<T>, f: F) -> Vec<Result<RunResult>>
where
    T: Send,
    F: Fn(T) -> Result<RunResult> + Sync + Send,
{
    use rayon::prelude::*;
    jobs.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_jobs<T, F>(jobs: Vec<T>, f: F) -> Vec<Result<RunResult>>
where
    F: Fn(T) -> Result<RunResult>,
{
    jobs.into_iter().map(f).collect()
}

fn prepare_all(bench: &BenchmarkConfig, seeds: &[u64]) -> Result<Vec<Prepared>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("seed set is empty".into()));
    }
    seeds.iter().map(|&s| prepare(bench, s)).collect()
}

/// Runs every (configuration, seed) pair; results come back grouped by
/// configuration in input order, seeds in input order within each group.
pub fn run_grid(bench: &BenchmarkConfig, configs: &[TrainConfig], seeds: &[u64]) -> Result<Vec<Vec<RunResult>>> {
    for cfg in configs {
        cfg.validate()?;
    }
    let prepared = prepare_all(bench, seeds)?;
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..prepared.len()).map(move |s| (c, s)))
        .collect();
    let results = run_jobs(jobs, |(c, s)| run_prepared(&prepared[s], &configs[c]));
    let mut grouped: Vec<Vec<RunResult>> = (0..configs.len()).map(|_| Vec::new()).collect();
    for (i, r) in results.into_iter().enumerate() {
        grouped[i / prepared.len()].push(r?);
    }
    Ok(grouped)
}

/// One row per λ in grid order, each averaged over `seeds`.
pub fn lambda_sweep(bench: &BenchmarkConfig, grid: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    let configs: Vec<TrainConfig> = grid
        .iter()
        .map(|&lambda| TrainConfig {
            lambda,
            ..bench.train.clone()
        })
        .collect();
    let runs = run_grid(bench, &configs, seeds)?;
    Ok(grid
        .iter()
        .zip(runs)
        .map(|(&lambda, group)| SweepRow {
            lambda,
            metrics: MeanMetrics::from_reports(group.iter().map(|r| &r.report)),
        })
        .collect())
}

/// One row per strategy. `none` is the expression-only baseline (λ = 0);
/// the weighted strategies use the configured λ.
pub fn strategy_compare(
    bench: &BenchmarkConfig,
    strategies: &[PosWeightStrategy],
    seeds: &[u64],
) -> Result<Vec<StrategyRow>> {
    if strategies.is_empty() {
        return Err(Error::InvalidArgument("strategy list is empty".into()));
    }
    let configs: Vec<TrainConfig> = strategies
        .iter()
        .map(|&strategy| TrainConfig {
            strategy,
            lambda: if strategy == PosWeightStrategy::None {
                0.0
            } else {
                bench.train.lambda
            },
            ..bench.train.clone()
        })
        .collect();
    let runs = run_grid(bench, &configs, seeds)?;
    Ok(strategies
        .iter()
        .zip(configs.iter().zip(runs))
        .map(|(&strategy, (cfg, group))| StrategyRow {
            strategy,
            lambda: cfg.lambda,
            metrics: MeanMetrics::from_reports(group.iter().map(|r| &r.report)),
            major_rows_all_ones: group.iter().all(|r| {
                ExpressionClass::ALL
                    .iter()
                    .filter(|c| c.is_major())
                    .all(|&c| r.pos_weights.row(c).iter().all(|&w| w == 1.0))
            }),
        })
        .collect())
}
