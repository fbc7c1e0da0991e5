use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use audfer::dataset::{load_dataset, save_dataset, stratified_indices};
use audfer::harness::experiment::{lambda_sweep, strategy_compare, BenchmarkConfig};
use audfer::harness::gradcheck::gradcheck;
use audfer::harness::metrics::{evaluate, EvalReport};
use audfer::harness::report::{
    export_confusion, export_embeddings, read_confusion_csv, write_epoch_logs, write_eval_report, write_strategy_table,
    write_sweep_table, write_timings, Metadata, TOOL,
};
use audfer::harness::train::{train, TrainConfig};
use audfer::ingest::{
    interpolate_zero_intensities, load_frame_predictions, load_openface_dir, read_frame_store, write_frame_predictions,
    write_frame_store, FrameAURecord, FrameQuality,
};
use audfer::knowledge::{
    aggregate_knowledge, compute_dataset_knowledge, export_knowledge, filter_reliable_frames, import_knowledge,
    scale_for_loss, EmptyClassPolicy, MidpointPolicy,
};
use audfer::labeling::{
    derive_video_au_labels, pos_weights, read_labels, read_pos_weights, read_video_expressions, write_labels,
    write_pos_weights, write_video_expressions, PosWeightStrategy,
};
use audfer::model::{load_checkpoint, save_checkpoint};
use audfer::synth::{generate_dataset, SynthSpec};
use audfer::{Error, KnowledgeMatrix, KnowledgeStage, Result};

use crate::args::{BenchArgs, Cli, Command, EmptyClasses, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Ingest {
            openface,
            no_interpolate,
        } => ingest(&ctx, &openface, !no_interpolate),
        Command::ExtractKnowledge {
            frames,
            preds,
            theta,
            dataset_id,
            empty_classes,
        } => extract_knowledge(&ctx, &frames, &preds, theta, dataset_id, empty_classes),
        Command::AggregateKnowledge {
            inputs,
            midpoint,
            loss_scaled,
        } => aggregate(&ctx, &inputs, &midpoint, loss_scaled),
        Command::PseudoLabel { frames, expressions } => pseudo_label(&ctx, &frames, &expressions),
        Command::PosWeights { labels, strategy } => pos_weights_cmd(&ctx, &labels, &strategy),
        Command::SynthGen { spec, test_fraction } => synth_gen(&ctx, spec.as_deref(), test_fraction),
        Command::Train(args) => train_cmd(&ctx, args),
        Command::Eval { checkpoint, data } => eval_cmd(&ctx, &checkpoint, &data),
        Command::Sweep { bench, grid } => sweep(&ctx, bench, grid.as_deref()),
        Command::CompareStrategies { bench, strategies } => compare(&ctx, bench, &strategies),
        Command::Gradcheck {
            batch,
            eps,
            feature_dim,
            hidden,
        } => gradcheck_cmd(&ctx, batch, eps, feature_dim, &hidden),
        Command::ExportConfusion {
            checkpoint,
            data,
            confusion,
        } => export_confusion_cmd(&ctx, checkpoint.as_deref(), data.as_deref(), confusion.as_deref()),
        Command::ExportEmbeddings { checkpoint, data } => {
            let (params, _) = load_checkpoint(&checkpoint)?;
            let data = load_dataset(&data)?;
            let out = ctx.out_path()?;
            ensure_parent(out)?;
            export_embeddings(&params, &data, out)?;
            println!(
                "wrote {} embeddings of width {} to {}",
                data.len(),
                params.embedding_dim(),
                out.display()
            );
            Ok(())
        }
    }
}

struct Context {
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

impl Context {
    fn out_path(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--out is required for this command".into()))
    }

    fn out_dir(&self) -> Result<&Path> {
        let dir = self.out_path()?;
        fs::create_dir_all(dir).map_err(|e| Error::File {
            path: dir.to_path_buf(),
            source: e,
        })?;
        Ok(dir)
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_toml(&read_text(path)?)?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(fs::File::open(path).map_err(io_err(path))?))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

/// Renders into memory, then writes the file in one go.
fn write_file(path: &Path, render: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    render(&mut buf)?;
    ensure_parent(path)?;
    fs::write(path, buf).map_err(io_err(path))
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad {what} value {s:?}")))
        })
        .collect()
}

/// Frames from an OpenFace CSV directory (interpolated) or a frame store file.
fn load_frames(path: &Path) -> Result<Vec<FrameAURecord>> {
    if path.is_dir() {
        let mut all = Vec::new();
        for (video, records) in load_openface_dir(path)? {
            let fixed = interpolate_zero_intensities(records)?;
            if !fixed.all_zero.is_empty() {
                log::warn!("{video}: all-zero intensity series for {:?}", fixed.all_zero);
            }
            all.extend(fixed.records);
        }
        Ok(all)
    } else {
        read_frame_store(open(path)?)
    }
}

fn ingest(ctx: &Context, dir: &Path, interpolate: bool) -> Result<()> {
    let out = ctx.out_path()?;
    let mut all = Vec::new();
    let mut videos = 0;
    for (video, records) in load_openface_dir(dir)? {
        videos += 1;
        if interpolate {
            let fixed = interpolate_zero_intensities(records)?;
            if !fixed.all_zero.is_empty() {
                log::warn!("{video}: all-zero intensity series for {:?}", fixed.all_zero);
            }
            all.extend(fixed.records);
        } else {
            all.extend(records);
        }
    }
    write_file(out, |buf| write_frame_store(buf, &all))?;
    println!(
        "ingested {} frames from {videos} videos into {}",
        all.len(),
        out.display()
    );
    Ok(())
}

fn extract_knowledge(
    ctx: &Context,
    frames: &Path,
    preds: &Path,
    theta: f64,
    dataset_id: Option<String>,
    empty: EmptyClasses,
) -> Result<()> {
    let out = ctx.out_path()?;
    let records = load_frames(frames)?;
    let predictions = load_frame_predictions(open(preds)?)?;
    let id = dataset_id.unwrap_or_else(|| {
        preds
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let reliable = filter_reliable_frames(&id, &predictions, theta)?;
    let policy = match empty {
        EmptyClasses::Reject => EmptyClassPolicy::Reject,
        EmptyClasses::Neutral => EmptyClassPolicy::Neutral,
    };
    let m = compute_dataset_knowledge(&records, &reliable, &FrameQuality::default(), policy)?;
    ensure_parent(out)?;
    export_knowledge(&m, out)?;
    println!(
        "{id}: {} reliable frames (theta {theta}), per-class {:?} -> {}",
        reliable.len(),
        reliable.retained,
        out.display()
    );
    Ok(())
}

fn aggregate(ctx: &Context, inputs: &[PathBuf], midpoint: &str, loss_scaled: bool) -> Result<()> {
    let out = ctx.out_path()?;
    let policy: MidpointPolicy = midpoint.parse()?;
    let matrices = inputs.iter().map(|p| import_knowledge(p)).collect::<Result<Vec<_>>>()?;
    let mut m = aggregate_knowledge(&matrices, policy)?;
    if loss_scaled {
        m = scale_for_loss(&m)?;
    }
    ensure_parent(out)?;
    export_knowledge(&m, out)?;
    println!(
        "aggregated {} datasets ({}) -> {}",
        matrices.len(),
        m.stage,
        out.display()
    );
    Ok(())
}

fn pseudo_label(ctx: &Context, frames: &Path, expressions: &Path) -> Result<()> {
    let out = ctx.out_path()?;
    let expr = read_video_expressions(open(expressions)?)?;
    let mut by_video: BTreeMap<String, Vec<FrameAURecord>> = BTreeMap::new();
    for r in load_frames(frames)? {
        by_video.entry(r.video_id.clone()).or_default().push(r);
    }
    let mut labels = Vec::with_capacity(by_video.len());
    for (video, records) in &by_video {
        let class = *expr
            .get(video)
            .ok_or_else(|| Error::InvalidArgument(format!("no expression for video {video}")))?;
        labels.push(derive_video_au_labels(records, class)?);
    }
    write_file(out, |buf| write_labels(buf, &labels))?;
    println!("labelled {} videos -> {}", labels.len(), out.display());
    Ok(())
}

fn pos_weights_cmd(ctx: &Context, labels: &Path, strategy: &str) -> Result<()> {
    let out = ctx.out_path()?;
    let strategy: PosWeightStrategy = strategy.parse()?;
    let labels = read_labels(open(labels)?)?;
    let spec = pos_weights(strategy, &labels)?;
    write_file(out, |buf| write_pos_weights(buf, &spec))?;
    println!("{strategy} weights from {} videos -> {}", labels.len(), out.display());
    Ok(())
}

fn synth_gen(ctx: &Context, spec_path: Option<&Path>, test_fraction: f64) -> Result<()> {
    let out = ctx.out_dir()?;
    let mut spec: SynthSpec = match spec_path {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    let synth = generate_dataset(&spec)?;
    let (train_idx, test_idx) = stratified_indices(&synth.data.labels, test_fraction, spec.seed)?;
    let frames = synth.frame_records();
    let preds = synth.one_hot_predictions();

    write_file(&out.join("spec.json"), |buf| {
        serde_json::to_writer_pretty(&mut *buf, &spec)?;
        Ok(writeln!(buf)?)
    })?;
    export_knowledge(&synth.knowledge, &out.join("ground_truth_knowledge.csv"))?;
    for (name, idx) in [("train", &train_idx), ("test", &test_idx)] {
        let dir = out.join(name);
        save_dataset(&synth.data.select(idx), &dir)?;
        let f: Vec<_> = idx.iter().map(|&i| frames[i].clone()).collect();
        let p: Vec<_> = idx.iter().map(|&i| preds[i].clone()).collect();
        let e: BTreeMap<_, _> = idx
            .iter()
            .map(|&i| (synth.data.labels[i].video_id.clone(), synth.data.labels[i].expression))
            .collect();
        write_file(&dir.join("frames.jsonl"), |buf| write_frame_store(buf, &f))?;
        write_file(&dir.join("predictions.csv"), |buf| write_frame_predictions(buf, &p))?;
        write_file(&dir.join("expressions.csv"), |buf| write_video_expressions(buf, &e))?;
    }
    println!(
        "generated {} clips ({} train, {} test), feature dim {} -> {}",
        synth.data.len(),
        train_idx.len(),
        test_idx.len(),
        spec.feature_dim,
        out.display()
    );
    Ok(())
}

fn loss_knowledge(m: KnowledgeMatrix) -> Result<KnowledgeMatrix> {
    match m.stage {
        KnowledgeStage::LossScaled => Ok(m),
        KnowledgeStage::Aggregate => scale_for_loss(&m),
        found => Err(Error::Stage {
            expected: KnowledgeStage::LossScaled,
            found,
        }),
    }
}

fn train_cmd(ctx: &Context, args: TrainArgs) -> Result<()> {
    let out = ctx.out_dir()?;
    let mut cfg = ctx.train_config()?;
    if let Some(s) = &args.strategy {
        cfg.strategy = s.parse()?;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(h) = &args.hidden {
        cfg.hidden = parse_list(h, "hidden width")?;
    }
    cfg.train_data = args.train_data.or(cfg.train_data);
    cfg.test_data = args.test_data.or(cfg.test_data);
    cfg.knowledge = args.knowledge.or(cfg.knowledge);
    cfg.pos_weights = args.pos_weights.or(cfg.pos_weights);
    cfg.validate()?;

    let missing = |what: &str| Error::InvalidArgument(format!("{what} is required (flag or config)"));
    let train_data = load_dataset(cfg.train_data.as_deref().ok_or_else(|| missing("--train-data"))?)?;
    let test_data = cfg.test_data.as_deref().map(load_dataset).transpose()?;
    let knowledge = loss_knowledge(import_knowledge(
        cfg.knowledge.as_deref().ok_or_else(|| missing("--knowledge"))?,
    )?)?;
    let pw = match &cfg.pos_weights {
        Some(p) => {
            let spec = read_pos_weights(open(p)?)?;
            if spec.strategy != cfg.strategy {
                log::warn!(
                    "weight file strategy {} differs from configured {}",
                    spec.strategy,
                    cfg.strategy
                );
            }
            spec
        }
        None => pos_weights(cfg.strategy, &train_data.labels)?,
    };

    let outcome = train(&cfg, &train_data, test_data.as_ref(), &knowledge, &pw)?;
    let meta = Metadata::new("epochs")
        .with("lambda", cfg.lambda)
        .with("strategy", cfg.strategy)
        .with("seed", cfg.seed)
        .with("tool", TOOL);
    save_checkpoint(&outcome.params, &outcome.optimizer, &out.join("checkpoint.bin"))?;
    write_file(&out.join("epochs.csv"), |buf| {
        write_epoch_logs(buf, &outcome.logs, &meta)
    })?;
    write_file(&out.join("timings.csv"), |buf| write_timings(buf, &outcome.logs))?;
    write_file(&out.join("pos_weights.csv"), |buf| write_pos_weights(buf, &pw))?;
    write_file(&out.join("config.toml"), |buf| {
        Ok(buf.write_all(cfg.to_toml().as_bytes())?)
    })?;
    if let Some(reason) = outcome.aborted {
        return Err(Error::NonFinite(format!("{reason}; last good checkpoint saved")));
    }
    if let Some(test) = &test_data {
        let report = evaluate(&outcome.params, test)?;
        write_eval_outputs(out, &report, cfg.seed)?;
    }
    let last = outcome.final_log();
    println!(
        "trained {} epochs: L = {:.6}, train WAR {:.4} UAR {:.4}{}",
        last.epoch,
        last.total_loss,
        last.train_war,
        last.train_uar,
        match (last.test_war, last.test_uar) {
            (Some(w), Some(u)) => format!(", test WAR {w:.4} UAR {u:.4}"),
            _ => String::new(),
        }
    );
    Ok(())
}

fn write_eval_outputs(dir: &Path, report: &EvalReport, seed: u64) -> Result<()> {
    let meta = Metadata::new("metrics").with("seed", seed).with("tool", TOOL);
    write_file(&dir.join("metrics.csv"), |buf| write_eval_report(buf, report, &meta))?;
    export_confusion(report, &dir.join("confusion"))?;
    Ok(())
}

fn eval_cmd(ctx: &Context, checkpoint: &Path, data: &Path) -> Result<()> {
    let out = ctx.out_dir()?;
    let (params, _) = load_checkpoint(checkpoint)?;
    let report = evaluate(&params, &load_dataset(data)?)?;
    write_eval_outputs(out, &report, params.seed)?;
    println!(
        "WAR {:.4} UAR {:.4} over {} samples",
        report.war, report.uar, report.samples
    );
    Ok(())
}

fn bench_config(ctx: &Context, args: &BenchArgs) -> Result<(BenchmarkConfig, Vec<u64>)> {
    let mut bench = match &args.bench {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| Error::InvalidArgument(format!("benchmark: {e}")))?,
        None => BenchmarkConfig::default(),
    };
    if ctx.config.is_some() {
        bench.train = ctx.train_config()?;
    }
    if let Some(s) = &args.strategy {
        bench.train.strategy = s.parse()?;
    }
    if let Some(l) = args.lambda {
        bench.train.lambda = l;
    }
    let seeds = parse_list(&args.seeds, "seed")?;
    Ok((bench, seeds))
}

fn bench_meta(kind: &str, bench: &BenchmarkConfig, seeds: &[u64]) -> Metadata {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    Metadata::new(kind)
        .with("seeds", seeds.join(";"))
        .with("samples", bench.synth.total)
        .with("feature_dim", bench.synth.feature_dim)
        .with("epochs", bench.train.epochs)
        .with("au_reduction", format!("{:?}", bench.train.au_reduction).to_lowercase())
        .with("tool", TOOL)
}

fn sweep(ctx: &Context, args: BenchArgs, grid: Option<&str>) -> Result<()> {
    let out = ctx.out_dir()?;
    let (bench, seeds) = bench_config(ctx, &args)?;
    let grid = match grid {
        Some(g) => parse_list(g, "lambda")?,
        None => audfer::harness::experiment::default_lambda_grid(),
    };
    let rows = lambda_sweep(&bench, &grid, &seeds)?;
    let grid_text: Vec<String> = grid.iter().map(f64::to_string).collect();
    let meta = bench_meta("lambda-sweep", &bench, &seeds)
        .with("strategy", bench.train.strategy)
        .with("grid", grid_text.join(";"));
    let path = out.join("sweep.csv");
    write_file(&path, |buf| write_sweep_table(buf, &rows, &meta))?;
    for r in &rows {
        println!(
            "lambda {:<4} WAR {:.4} UAR {:.4}",
            r.lambda, r.metrics.war, r.metrics.uar
        );
    }
    println!("-> {}", path.display());
    Ok(())
}

fn compare(ctx: &Context, args: BenchArgs, strategies: &str) -> Result<()> {
    let out = ctx.out_dir()?;
    let (bench, seeds) = bench_config(ctx, &args)?;
    let strategies: Vec<PosWeightStrategy> = parse_list(strategies, "strategy")?;
    let rows = strategy_compare(&bench, &strategies, &seeds)?;
    let meta = bench_meta("strategy-comparison", &bench, &seeds).with("lambda", bench.train.lambda);
    let path = out.join("strategies.csv");
    write_file(&path, |buf| write_strategy_table(buf, &rows, &meta))?;
    for r in &rows {
        println!(
            "{:<9} WAR {:.4} UAR {:.4}",
            r.strategy.as_str(),
            r.metrics.war,
            r.metrics.uar
        );
    }
    println!("-> {}", path.display());
    Ok(())
}

fn gradcheck_cmd(ctx: &Context, batch: usize, eps: f64, feature_dim: usize, hidden: &str) -> Result<()> {
    let hidden: Vec<usize> = parse_list(hidden, "hidden width")?;
    let report = gradcheck(ctx.seed.unwrap_or(0), batch, eps, feature_dim, &hidden)?;
    let line = serde_json::to_string(&report)?;
    println!("{line}");
    if let Some(out) = &ctx.out {
        write_file(out, |buf| Ok(writeln!(buf, "{line}")?))?;
    }
    Ok(())
}

fn export_confusion_cmd(
    ctx: &Context,
    checkpoint: Option<&Path>,
    data: Option<&Path>,
    confusion: Option<&Path>,
) -> Result<()> {
    let out = ctx.out_path()?;
    let report = match (checkpoint, data, confusion) {
        (_, _, Some(c)) => EvalReport::from_confusion(read_confusion_csv(open(c)?)?)?,
        (Some(ck), Some(d), None) => evaluate(&load_checkpoint(ck)?.0, &load_dataset(d)?)?,
        _ => {
            return Err(Error::InvalidArgument(
                "give --checkpoint with --data, or --confusion".into(),
            ))
        }
    };
    let (csv, svg) = export_confusion(&report, out)?;
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}
