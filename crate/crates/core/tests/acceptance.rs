//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

use std::fs;
use std::path::Path;
use std::time::Instant;

use audfer::dataset::Dataset;
use audfer::harness::experiment::{default_lambda_grid, BenchmarkConfig, DEFAULT_SEEDS};
use audfer::harness::gradcheck::{gradcheck, DEFAULT_EPSILON};
use audfer::harness::report::{
    export_confusion, read_confusion_csv, read_table, write_confusion_csv, write_epoch_logs, write_eval_report,
    write_strategy_table, write_sweep_table, Metadata,
};
use audfer::harness::{evaluate, lambda_sweep, strategy_compare, train, TrainConfig};
use audfer::ingest::{read_frame_store, write_frame_store, FrameAURecord, FramePrediction, FrameQuality};
use audfer::knowledge::{
    aggregate_knowledge, compute_dataset_knowledge, export_knowledge, filter_reliable_frames, scale_for_loss,
    EmptyClassPolicy, MidpointPolicy,
};
use audfer::labeling::{
    derive_video_au_labels, pos_weight_distinct, pos_weight_global, pos_weight_minor, pos_weights, PosWeightStrategy,
    VideoAULabel, POS_WEIGHT_FLOOR,
};
use audfer::loss::expression_loss;
use audfer::model::save_checkpoint;
use audfer::synth::{generate_dataset, SynthSpec};
use audfer::{ActionUnit, ExpressionClass, KnowledgeMatrix, KnowledgeStage, NUM_AUS, NUM_EXPRESSIONS};
use ndarray::Array2;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn gradients() -> Outcome {
    let start = Instant::now();
    let (mut loss_worst, mut model_worst) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let r = gradcheck(seed, 8, DEFAULT_EPSILON, 8, &[4]).map_err(err)?;
        loss_worst = loss_worst.max(r.loss_error());
        model_worst = model_worst.max(r.model.max_relative_error);
    }
    let secs = start.elapsed().as_secs_f64();
    check(loss_worst < 1e-5, || {
        format!("loss gradient error {loss_worst:.3e} >= 1e-5")
    })?;
    check(model_worst < 1e-4, || {
        format!("model gradient error {model_worst:.3e} >= 1e-4")
    })?;
    check(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "100 instances, loss err {loss_worst:.2e}, model err {model_worst:.2e}, {secs:.2}s"
    ))
}

// ---------------------------------------------------------------- 2

fn factor_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let target = -(5.0f64).ln();
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(1..=32);
        let scale = rng.random_range(0.1..20.0);
        let logits = Array2::from_shape_simple_fn((n, NUM_EXPRESSIONS), || scale * (rng.random::<f64>() - 0.5));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..NUM_EXPRESSIONS)).collect();
        let (l5, g5) = expression_loss(logits.view(), &labels, 5.0).map_err(err)?;
        let (l1, g1) = expression_loss(logits.view(), &labels, 1.0).map_err(err)?;
        worst = worst.max(((l5 - l1) - target).abs());
        let gdiff = g5.iter().zip(g1.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        check(gdiff <= 1e-12, || format!("gradients differ by {gdiff:.3e}"))?;
    }
    check(worst <= 1e-12, || format!("loss difference off by {worst:.3e}"))?;
    Ok(format!("500 batches, max |Δ + ln 5| = {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

/// Hand enumeration in exact arithmetic. `None` marks the all-positive floor.
fn rational_ratio(count: usize, positives: usize) -> Option<Ratio<i64>> {
    if positives == 0 {
        Some(Ratio::from_integer(count as i64))
    } else if positives == count {
        None
    } else {
        Some(Ratio::new((count - positives) as i64, positives as i64))
    }
}

fn matches(value: f64, oracle: Option<Ratio<i64>>) -> bool {
    match oracle {
        None => value == POS_WEIGHT_FLOOR,
        Some(r) => value == *r.numer() as f64 / *r.denom() as f64,
    }
}

fn random_labels(rng: &mut ChaCha8Rng) -> Vec<VideoAULabel> {
    let n = rng.random_range(1..=50);
    // Skew toward a few classes so empty classes show up.
    let classes: Vec<usize> = (0..rng.random_range(1..=NUM_EXPRESSIONS))
        .map(|_| rng.random_range(0..NUM_EXPRESSIONS))
        .collect();
    let density: [f64; NUM_AUS] = std::array::from_fn(|_| match rng.random_range(0..8) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random(),
    });
    (0..n)
        .map(|i| VideoAULabel {
            video_id: format!("v{i}"),
            y: std::array::from_fn(|j| u8::from(rng.random_bool(density[j]))),
            frame_count: 1,
            expression: ExpressionClass::from_index(classes[rng.random_range(0..classes.len())]).unwrap(),
        })
        .collect()
}

fn pos_weight_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut cells, mut fallbacks) = (0usize, 0usize);
    for trial in 0..500 {
        let labels = random_labels(&mut rng);
        let global = pos_weight_global(&labels).map_err(err)?;
        let distinct = pos_weight_distinct(&labels).map_err(err)?;
        let minor = pos_weight_minor(&labels).map_err(err)?;

        let total = labels.len();
        for j in 0..NUM_AUS {
            let pos = labels.iter().filter(|l| l.y[j] == 1).count();
            let oracle = rational_ratio(total, pos);
            for c in 0..NUM_EXPRESSIONS {
                check(matches(global.values[c][j], oracle), || {
                    format!(
                        "trial {trial}: global[{c}][{j}] = {} vs {oracle:?}",
                        global.values[c][j]
                    )
                })?;
            }
        }
        for class in ExpressionClass::ALL {
            let c = class.index();
            let members: Vec<&VideoAULabel> = labels.iter().filter(|l| l.expression == class).collect();
            for j in 0..NUM_AUS {
                let got = distinct.values[c][j];
                let ok = if members.is_empty() {
                    fallbacks += 1;
                    got == 1.0
                } else {
                    let pos = members.iter().filter(|l| l.y[j] == 1).count();
                    if pos == 0 || pos == members.len() {
                        fallbacks += 1;
                    }
                    matches(got, rational_ratio(members.len(), pos))
                };
                cells += 1;
                check(ok, || format!("trial {trial}: distinct[{class}][{j}] = {got}"))?;
            }
            let expect: &[f64; NUM_AUS] = if class.is_major() {
                &[1.0; NUM_AUS]
            } else {
                distinct.row(class)
            };
            check(minor.row(class) == expect, || {
                format!("trial {trial}: minor row {class} mismatch")
            })?;
        }
    }
    Ok(format!(
        "500 toy sets, {cells} class cells exact, {fallbacks} fallback cells"
    ))
}

// ---------------------------------------------------------------- 4

fn frame(video: &str, index: u32, intensities: [f64; 17]) -> FrameAURecord {
    FrameAURecord {
        video_id: video.into(),
        frame_index: index,
        timestamp: index as f64 / 30.0,
        confidence: 0.98,
        success: true,
        intensities,
        presences: [0; NUM_AUS],
        interpolated_mask: [false; 17],
    }
}

fn prediction(video: &str, index: u32, class: ExpressionClass, score: f64) -> FramePrediction {
    let mut scores = [(1.0 - score) / 6.0; NUM_EXPRESSIONS];
    scores[class.index()] = score;
    FramePrediction {
        video_id: video.into(),
        frame_index: index,
        scores,
        asserted_label: class,
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn knowledge_oracle() -> Outcome {
    // Intensity slots: 0 AU01, 2 AU04, 4 AU06, 8 AU12, 10 AU15, 16 AU45.
    let with = |base: f64, set: &[(usize, f64)]| {
        let mut v = [base; 17];
        for &(i, x) in set {
            v[i] = x;
        }
        v
    };
    let records = vec![
        frame("h", 0, with(1.0, &[(4, 2.0), (8, 4.0)])),
        frame("h", 1, with(0.2, &[(4, 3.0), (8, 5.0)])),
        frame("h", 2, with(2.5, &[(4, 4.0), (8, 3.0)])),
        // Below theta: must be ignored.
        frame("h", 3, with(5.0, &[])),
        // Reliable but low detector confidence: must be ignored.
        FrameAURecord {
            confidence: 0.3,
            ..frame("h", 4, with(5.0, &[]))
        },
        frame("s", 0, with(0.5, &[(0, 2.0), (2, 0.5), (10, 4.0)])),
        frame("s", 1, with(0.0, &[(0, 2.0), (2, 3.5), (10, 1.0)])),
        frame("s", 2, with(0.9, &[(0, 5.0), (2, 2.5), (10, 3.0)])),
    ];
    let (h, s) = (ExpressionClass::Happy, ExpressionClass::Sad);
    let preds = vec![
        prediction("h", 0, h, 0.9),
        prediction("h", 1, h, 0.8),
        prediction("h", 2, h, 0.7),
        prediction("h", 3, h, 0.4),
        prediction("h", 4, h, 0.9),
        prediction("s", 0, s, 0.6),
        prediction("s", 1, s, 0.99),
        prediction("s", 2, s, 0.75),
    ];
    let reliable = filter_reliable_frames("hand", &preds, 0.5).map_err(err)?;
    let m = compute_dataset_knowledge(&records, &reliable, &FrameQuality::default(), EmptyClassPolicy::Neutral)
        .map_err(err)?;

    // Medians by hand. Happy: AU06 3, AU12 4, the other 15 at 1, AU28 = 22/17.
    // Sad: AU01 2, AU04 2.5, AU15 3, the other 14 at 0.5, AU28 = 14.5/17.
    // Present range [0.5, 4], so the midpoint is 2.25.
    let mut oracle = [[0.5f64; NUM_EXPRESSIONS]; NUM_AUS];
    for au in ActionUnit::ALL {
        let j = au.index();
        oracle[j][h.index()] = sig(match au {
            ActionUnit::Au06 => 0.75,
            ActionUnit::Au12 => 1.75,
            ActionUnit::Au28 => 22.0 / 17.0 - 2.25,
            _ => -1.25,
        });
        oracle[j][s.index()] = sig(match au {
            ActionUnit::Au01 => -0.25,
            ActionUnit::Au04 => 0.25,
            ActionUnit::Au15 => 0.75,
            ActionUnit::Au28 => 14.5 / 17.0 - 2.25,
            _ => -1.75,
        });
    }
    let mut worst = 0.0f64;
    for (j, row) in oracle.iter().enumerate() {
        for (c, &want) in row.iter().enumerate() {
            worst = worst.max((m.values[j][c] - want).abs());
        }
    }
    check(worst <= 1e-9, || format!("per-dataset matrix off by {worst:.3e}"))?;
    check(m.support[0][h.index()] == 3 && m.support[0][s.index()] == 3, || {
        format!("support {:?}", m.support[0])
    })?;

    let half = KnowledgeMatrix::filled(0.5, KnowledgeStage::PerDataset);
    let agg = aggregate_knowledge(
        &[half.clone(), half.clone(), half.clone(), half],
        MidpointPolicy::Compat,
    )
    .map_err(err)?;
    let want = 1.0 / (1.0 + 0.5f64.exp());
    let agg_worst = agg
        .values
        .iter()
        .flatten()
        .map(|v| (v - want).abs())
        .fold(0.0, f64::max);
    check(agg_worst <= 1e-9, || format!("compat aggregate off by {agg_worst:.3e}"))?;
    Ok(format!(
        "per-dataset max err {worst:.1e}, compat aggregate {:.5} (err {agg_worst:.1e})",
        agg.values[0][0]
    ))
}

// ---------------------------------------------------------------- 5

fn label_boundary() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 1..=200usize {
        // Smallest presence count that reaches half, and one below it.
        let at = n.div_ceil(2);
        for (sum, want) in [(at, 1u8), (at - 1, 0u8)] {
            let mut on: Vec<bool> = (0..n).map(|i| i < sum).collect();
            for i in (1..n).rev() {
                on.swap(i, rng.random_range(0..=i));
            }
            let records: Vec<FrameAURecord> = on
                .iter()
                .enumerate()
                .map(|(i, &p)| FrameAURecord {
                    presences: [u8::from(p); NUM_AUS],
                    ..frame("v", i as u32, [0.0; 17])
                })
                .collect();
            let label = derive_video_au_labels(&records, ExpressionClass::Neutral).map_err(err)?;
            check(label.y.iter().all(|&y| y == want), || {
                format!("n={n}, sum={sum}: got {:?}, want {want}", label.y)
            })?;
            check(label.frame_count == n, || {
                format!("n={n}: frame count {}", label.frame_count)
            })?;
        }
    }
    Ok("n = 1..=200, both sides of the boundary".into())
}

// ---------------------------------------------------------------- 6

fn random_dataset(rng: &mut ChaCha8Rng, id: usize) -> (Vec<FrameAURecord>, Vec<FramePrediction>) {
    let videos = rng.random_range(1..=6);
    let (mut records, mut preds) = (Vec::new(), Vec::new());
    let tied = rng.random_bool(0.05);
    for v in 0..videos {
        let vid = format!("d{id}v{v}");
        for f in 0..rng.random_range(1..=6u32) {
            let intensities = std::array::from_fn(|_| {
                if tied {
                    1.0
                } else {
                    match rng.random_range(0..8) {
                        0 => 0.0,
                        1 => 5.0,
                        _ => rng.random_range(0.0..=5.0),
                    }
                }
            });
            let first = records.is_empty();
            records.push(FrameAURecord {
                confidence: if first { 1.0 } else { rng.random_range(0.5..=1.0) },
                success: first || rng.random_bool(0.9),
                ..frame(&vid, f, intensities)
            });
            let class = ExpressionClass::from_index(rng.random_range(0..NUM_EXPRESSIONS)).unwrap();
            let score = if first { 1.0 } else { rng.random_range(0.0..=1.0) };
            preds.push(prediction(&vid, f, class, score));
        }
    }
    (records, preds)
}

fn range_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cells = 0usize;
    for trial in 0..1000 {
        let d = rng.random_range(1..=5);
        let theta = rng.random_range(0.0..0.95);
        let mut per_dataset = Vec::with_capacity(d);
        for id in 0..d {
            let (records, preds) = random_dataset(&mut rng, id);
            let reliable = filter_reliable_frames(&format!("d{id}"), &preds, theta).map_err(err)?;
            let m = compute_dataset_knowledge(&records, &reliable, &FrameQuality::default(), EmptyClassPolicy::Neutral)
                .map_err(|e| format!("trial {trial}: {e}"))?;
            per_dataset.push(m);
        }
        let policy = if rng.random_bool(0.5) {
            MidpointPolicy::Compat
        } else {
            MidpointPolicy::General
        };
        let agg = aggregate_knowledge(&per_dataset, policy).map_err(err)?;
        let scaled = scale_for_loss(&agg).map_err(err)?;
        for m in per_dataset.iter().chain(std::iter::once(&agg)) {
            for &v in m.values.iter().flatten() {
                cells += 1;
                check(v > 0.0 && v < 1.0, || format!("trial {trial}: {:?} cell {v}", m.stage))?;
            }
        }
        for &v in scaled.values.iter().flatten() {
            cells += 1;
            check(v > 0.0 && v < 5.0, || format!("trial {trial}: loss-scaled cell {v}"))?;
        }
    }
    Ok(format!("1000 pipelines, {cells} cells in range"))
}

// ---------------------------------------------------------------- 7

fn imbalance_effect() -> Outcome {
    let start = Instant::now();
    let bench = BenchmarkConfig::default();
    let rows = strategy_compare(
        &bench,
        &[PosWeightStrategy::None, PosWeightStrategy::Distinct],
        &DEFAULT_SEEDS,
    )
    .map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let (base, ours) = (&rows[0].metrics, &rows[1].metrics);
    let (bm, om) = (base.minor_recall.unwrap_or(0.0), ours.minor_recall.unwrap_or(0.0));
    let summary = format!(
        "UAR {:.2} -> {:.2} ({:+.2} pts), minor recall {:.2} -> {:.2}, WAR {:.2} -> {:.2}, {secs:.1}s",
        100.0 * base.uar,
        100.0 * ours.uar,
        100.0 * (ours.uar - base.uar),
        100.0 * bm,
        100.0 * om,
        100.0 * base.war,
        100.0 * ours.war,
    );
    check(ours.uar - base.uar >= 0.02, || {
        format!("UAR gain below 2 points: {summary}")
    })?;
    check(om > bm, || format!("minor recall not above baseline: {summary}"))?;
    check(secs < 300.0, || format!("too slow: {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 8

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> audfer::Result<()>) -> Result<(), String> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(err)?;
    fs::write(path, buf).map_err(err)
}

/// Frame store, pseudo-labels, pos-weights, knowledge, training, evaluation.
fn full_pipeline(dir: &Path, seed: u64) -> Result<(), String> {
    let spec = SynthSpec {
        seed,
        total: 600,
        ..SynthSpec::default()
    };
    let synth = generate_dataset(&spec).map_err(err)?;

    let store = dir.join("frames.jsonl");
    write_file(&store, |b| write_frame_store(b, &synth.frame_records()))?;
    let frames = read_frame_store(fs::File::open(&store).map_err(err)?).map_err(err)?;

    let labels: Vec<VideoAULabel> = frames
        .iter()
        .zip(&synth.data.labels)
        .map(|(f, l)| derive_video_au_labels(std::slice::from_ref(f), l.expression))
        .collect::<audfer::Result<_>>()
        .map_err(err)?;
    let data = Dataset::new(synth.data.features.clone(), labels).map_err(err)?;
    let (train_set, test_set) = audfer::dataset::split_stratified(&data, 0.2, seed).map_err(err)?;

    let reliable = filter_reliable_frames("synth", &synth.one_hot_predictions(), 0.5).map_err(err)?;
    let per = compute_dataset_knowledge(&frames, &reliable, &FrameQuality::default(), EmptyClassPolicy::Reject)
        .map_err(err)?;
    let knowledge = scale_for_loss(&aggregate_knowledge(&[per], MidpointPolicy::General).map_err(err)?).map_err(err)?;
    export_knowledge(&knowledge, &dir.join("knowledge.csv")).map_err(err)?;

    let cfg = TrainConfig {
        seed,
        epochs: 8,
        ..TrainConfig::default()
    };
    let pw = pos_weights(cfg.strategy, &train_set.labels).map_err(err)?;
    let outcome = train(&cfg, &train_set, Some(&test_set), &knowledge, &pw).map_err(err)?;
    save_checkpoint(&outcome.params, &outcome.optimizer, &dir.join("checkpoint.bin")).map_err(err)?;
    let report = evaluate(&outcome.params, &test_set).map_err(err)?;
    let meta = Metadata::new("eval").with("seed", seed);
    write_file(&dir.join("metrics.csv"), |b| write_eval_report(b, &report, &meta))?;
    write_file(&dir.join("epochs.csv"), |b| write_epoch_logs(b, &outcome.logs, &meta))?;
    write_file(&dir.join("confusion.csv"), |b| {
        write_confusion_csv(b, &report.confusion)
    })?;

    let small = small_bench();
    let sweep = lambda_sweep(&small, &[0.0, 0.5], &[seed, seed + 1]).map_err(err)?;
    write_file(&dir.join("sweep.csv"), |b| {
        write_sweep_table(b, &sweep, &Metadata::new("sweep"))
    })
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    full_pipeline(a.path(), 11)?;
    full_pipeline(b.path(), 11)?;
    let mut names: Vec<String> = fs::read_dir(a.path())
        .map_err(err)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    names.sort();
    for name in &names {
        let x = fs::read(a.path().join(name)).map_err(err)?;
        let y = fs::read(b.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        check(x == y, || format!("{name} differs between runs"))?;
    }
    check(
        names.iter().any(|n| n == "checkpoint.bin") && names.iter().any(|n| n == "metrics.csv"),
        || format!("missing outputs: {names:?}"),
    )?;
    Ok(format!("{} files bit-identical ({})", names.len(), names.join(", ")))
}

// ---------------------------------------------------------------- 9

fn small_bench() -> BenchmarkConfig {
    let mut bench = BenchmarkConfig::default();
    bench.synth.total = 400;
    bench.train.epochs = 4;
    bench
}

fn artifacts() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let bench = small_bench();
    let seeds = [0, 1];
    let grid = default_lambda_grid();

    let sweep = lambda_sweep(&bench, &grid, &seeds).map_err(err)?;
    let mut buf = Vec::new();
    write_sweep_table(&mut buf, &sweep, &Metadata::new("sweep")).map_err(err)?;
    let (_, header, rows) = read_table(buf.as_slice()).map_err(err)?;
    check(rows.len() == grid.len(), || {
        format!("sweep has {} rows for {} grid points", rows.len(), grid.len())
    })?;
    let col = header
        .iter()
        .position(|h| h == "lambda")
        .ok_or("sweep table has no lambda column")?;
    for (row, &lambda) in rows.iter().zip(&grid) {
        let got: f64 = row[col].parse().map_err(err)?;
        check(got == lambda, || format!("sweep row lambda {got} vs grid {lambda}"))?;
    }

    let all = [
        PosWeightStrategy::None,
        PosWeightStrategy::Global,
        PosWeightStrategy::Distinct,
        PosWeightStrategy::Minor,
    ];
    let strategies = strategy_compare(&bench, &all, &seeds).map_err(err)?;
    let mut buf = Vec::new();
    write_strategy_table(&mut buf, &strategies, &Metadata::new("strategies")).map_err(err)?;
    let (_, header, rows) = read_table(buf.as_slice()).map_err(err)?;
    let mut wanted = vec!["strategy".to_string(), "war".into(), "uar".into()];
    wanted.extend(ExpressionClass::ALL.iter().map(|c| c.name().to_string()));
    for w in &wanted {
        check(header.contains(w), || {
            format!("strategy table lacks column {w}: {header:?}")
        })?;
    }
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    check(names == ["none", "global", "distinct", "minor"], || {
        format!("strategy rows {names:?}")
    })?;
    check(rows.iter().all(|r| r.len() == header.len()), || {
        "ragged strategy table".into()
    })?;

    let prepared = audfer::harness::prepare(&bench, 0).map_err(err)?;
    let run = audfer::harness::run_prepared(&prepared, &bench.train).map_err(err)?;
    let (csv_path, svg_path) = export_confusion(&run.report, &dir.path().join("confusion")).map_err(err)?;
    let svg = fs::read_to_string(&svg_path).map_err(err)?;
    let svg_cells = svg.matches(r#"class="cell""#).count();
    check(svg_cells == 49, || format!("SVG has {svg_cells} cells"))?;
    let text = fs::read_to_string(&csv_path).map_err(err)?;
    let csv_cells: usize = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').count() - 1)
        .sum();
    check(csv_cells == 49, || format!("confusion CSV has {csv_cells} cells"))?;
    let back = read_confusion_csv(text.as_bytes()).map_err(err)?;
    check(back == run.report.confusion, || {
        "confusion CSV does not round-trip".into()
    })?;
    Ok(format!(
        "sweep {} rows, strategy rows {names:?}, heatmap 49 SVG cells and 49 CSV cells",
        grid.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradients),
        ("expression-loss factor invariance", factor_invariance),
        ("pos-weight oracles", pos_weight_oracles),
        ("knowledge pipeline oracle", knowledge_oracle),
        ("pseudo-label boundary", label_boundary),
        ("knowledge range invariants", range_invariants),
        ("end-to-end imbalance effect", imbalance_effect),
        ("determinism", determinism),
        ("artifact fidelity", artifacts),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|a| a == &n.to_string() || name.contains(a.as_str())) {
            continue;
        }
        match f() {
            Ok(detail) => println!("criterion {n}: PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
