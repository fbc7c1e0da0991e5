//! Runs on the default synthetic benchmark over the default five seeds.

use audfer::harness::experiment::{
    default_lambda_grid, lambda_sweep, strategy_compare, BenchmarkConfig, DEFAULT_SEEDS,
};
use audfer::labeling::PosWeightStrategy;

#[test]
fn best_sweep_lambda_is_positive() {
    let rows = lambda_sweep(&BenchmarkConfig::default(), &default_lambda_grid(), &DEFAULT_SEEDS).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.windows(2).all(|w| w[1].lambda > w[0].lambda));
    let best = rows
        .iter()
        .max_by(|a, b| a.metrics.uar.total_cmp(&b.metrics.uar))
        .unwrap();
    let table: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda, r.metrics.uar)).collect();
    assert!(best.lambda > 0.0, "{table:?}");
}

#[test]
fn a_weighted_strategy_beats_the_baseline() {
    let all = [
        PosWeightStrategy::None,
        PosWeightStrategy::Global,
        PosWeightStrategy::Distinct,
        PosWeightStrategy::Minor,
    ];
    let rows = strategy_compare(&BenchmarkConfig::default(), &all, &DEFAULT_SEEDS).unwrap();
    let base = rows[0].metrics.uar;
    let summary: Vec<(&str, f64)> = rows.iter().map(|r| (r.strategy.as_str(), r.metrics.uar)).collect();
    assert!(rows[1..].iter().any(|r| r.metrics.uar > base), "{summary:?}");
    assert!(rows[3].major_rows_all_ones);
}
