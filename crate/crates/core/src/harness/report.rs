//! Comma-separated tables (each with a one-line `# key=value` header), the
//! confusion heatmap, and embedding export.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use super::experiment::{MeanMetrics, StrategyRow, SweepRow};
use super::metrics::EvalReport;
use super::train::EpochLog;
use crate::dataset::Dataset;
use crate::domain::{ExpressionClass, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};

pub const TOOL: &str = concat!("audfer-", env!("CARGO_PKG_VERSION"));

/// Ordered key/value pairs for the metadata line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn new(kind: &str) -> Self {
        Metadata(vec![("table".into(), kind.into())])
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn line(&self) -> String {
        let mut s = String::from("#");
        for (k, v) in &self.0 {
            let v: String = v.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
            let _ = write!(s, " {k}={v}");
        }
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| Error::CorruptData(format!("metadata line {line:?}")))?;
        let mut pairs = Vec::new();
        for tok in body.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::CorruptData(format!("metadata token {tok:?}")))?;
            pairs.push((k.to_string(), v.to_string()));
        }
        Ok(Metadata(pairs))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn class_columns() -> String {
    ExpressionClass::ALL
        .iter()
        .map(|c| c.name())
        .collect::<Vec<_>>()
        .join(",")
}

fn recall_cells(recalls: &[Option<f64>; NUM_EXPRESSIONS]) -> String {
    recalls.iter().map(|&r| opt(r)).collect::<Vec<_>>().join(",")
}

pub fn write_eval_report<W: Write>(mut out: W, report: &EvalReport, meta: &Metadata) -> Result<()> {
    writeln!(out, "{}", meta.line())?;
    writeln!(out, "samples,war,uar,minor_recall,{}", class_columns())?;
    writeln!(
        out,
        "{},{},{},{},{}",
        report.samples,
        report.war,
        report.uar,
        opt(report.minor_recall()),
        recall_cells(&report.per_class_recall)
    )?;
    Ok(())
}

/// Epoch logs without wall-clock time, so reruns give identical bytes.
pub fn write_epoch_logs<W: Write>(mut out: W, logs: &[EpochLog], meta: &Metadata) -> Result<()> {
    writeln!(out, "{}", meta.line())?;
    writeln!(
        out,
        "epoch,expression_loss,au_loss,total_loss,lambda,train_war,train_uar,test_war,test_uar"
    )?;
    for l in logs {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            l.epoch,
            l.expression_loss,
            l.au_loss,
            l.total_loss,
            l.lambda,
            l.train_war,
            l.train_uar,
            opt(l.test_war),
            opt(l.test_uar)
        )?;
    }
    Ok(())
}

pub fn write_timings<W: Write>(mut out: W, logs: &[EpochLog]) -> Result<()> {
    writeln!(out, "{}", Metadata::new("timings").with("tool", TOOL).line())?;
    writeln!(out, "epoch,wall_seconds")?;
    for l in logs {
        writeln!(out, "{},{}", l.epoch, l.wall_seconds)?;
    }
    Ok(())
}

fn metric_cells(m: &MeanMetrics) -> String {
    format!(
        "{},{},{},{},{}",
        m.war,
        m.uar,
        recall_cells(&m.recalls),
        opt(m.minor_recall),
        m.seeds
    )
}

pub fn write_sweep_table<W: Write>(mut out: W, rows: &[SweepRow], meta: &Metadata) -> Result<()> {
    writeln!(out, "{}", meta.line())?;
    writeln!(out, "lambda,war,uar,{},minor_recall,seeds", class_columns())?;
    for r in rows {
        writeln!(out, "{},{}", r.lambda, metric_cells(&r.metrics))?;
    }
    Ok(())
}

/// One row per strategy: WAR, UAR, then per-class accuracy.
pub fn write_strategy_table<W: Write>(mut out: W, rows: &[StrategyRow], meta: &Metadata) -> Result<()> {
    writeln!(out, "{}", meta.line())?;
    writeln!(
        out,
        "strategy,lambda,war,uar,{},minor_recall,seeds,major_rows_all_ones",
        class_columns()
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.strategy,
            r.lambda,
            metric_cells(&r.metrics),
            r.major_rows_all_ones
        )?;
    }
    Ok(())
}

/// Header line plus data rows of a table written by this module.
pub fn read_table<R: BufRead>(reader: R) -> Result<(Metadata, Vec<String>, Vec<Vec<String>>)> {
    let mut lines = reader.lines();
    let meta = Metadata::parse(&lines.next().ok_or_else(|| Error::CorruptData("empty table".into()))??)?;
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::CorruptData("table without header".into()))??
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(Error::Shape(format!(
                "row has {} cells, header {}",
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((meta, header, rows))
}

pub fn write_confusion_csv<W: Write>(mut out: W, confusion: &[[u64; NUM_EXPRESSIONS]; NUM_EXPRESSIONS]) -> Result<()> {
    writeln!(
        out,
        "{}",
        Metadata::new("confusion")
            .with("rows", "true")
            .with("columns", "predicted")
            .line()
    )?;
    writeln!(out, "true,{}", class_columns())?;
    for (class, row) in ExpressionClass::ALL.iter().zip(confusion) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(out, "{},{}", class.name(), cells.join(","))?;
    }
    Ok(())
}

pub fn read_confusion_csv<R: BufRead>(reader: R) -> Result<[[u64; NUM_EXPRESSIONS]; NUM_EXPRESSIONS]> {
    let (_, header, rows) = read_table(reader)?;
    if header.len() != NUM_EXPRESSIONS + 1 || rows.len() != NUM_EXPRESSIONS {
        return Err(Error::Shape(format!("confusion table {}x{}", rows.len(), header.len())));
    }
    let mut m = [[0u64; NUM_EXPRESSIONS]; NUM_EXPRESSIONS];
    for (i, row) in rows.iter().enumerate() {
        for j in 0..NUM_EXPRESSIONS {
            let text = &row[j + 1];
            m[i][j] = text.trim().parse().map_err(|_| Error::NonNumeric {
                row: i + 1,
                column: header[j + 1].clone(),
                text: text.clone(),
            })?;
        }
    }
    Ok(m)
}

/// Self-contained SVG heatmap: 49 `cell` rects shaded by row-normalized
/// rate, 7 true-class and 7 predicted-class `axis-label` texts.
pub fn confusion_svg(confusion: &[[u64; NUM_EXPRESSIONS]; NUM_EXPRESSIONS]) -> String {
    const CELL: usize = 56;
    const LEFT: usize = 90;
    const TOP: usize = 40;
    let size = CELL * NUM_EXPRESSIONS;
    let (w, h) = (LEFT + size + 10, TOP + size + 50);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">predicted</text>"#,
        LEFT + size / 2
    );
    for (i, row) in confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (j, &count) in row.iter().enumerate() {
            let rate = if total > 0 { count as f64 / total as f64 } else { 0.0 };
            let shade = (255.0 * (1.0 - rate)).round() as u8;
            let (x, y) = (LEFT + j * CELL, TOP + i * CELL);
            let _ = writeln!(
                s,
                r##"<rect class="cell" data-true="{i}" data-pred="{j}" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="gray"/>"##
            );
            let ink = if rate > 0.5 { "#fff" } else { "#000" };
            let _ = writeln!(
                s,
                r#"<text class="count" x="{}" y="{}" text-anchor="middle" fill="{ink}">{count}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    for (k, class) in ExpressionClass::ALL.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="axis-label" x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6,
            TOP + k * CELL + CELL / 2 + 4,
            class.name()
        );
        let _ = writeln!(
            s,
            r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + k * CELL + CELL / 2,
            TOP + size + 18,
            class.short_name()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<path>.csv` and `<path>.svg`; returns both paths.
pub fn export_confusion(report: &EvalReport, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv_path = path.with_extension("csv");
    let svg_path = path.with_extension("svg");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let mut buf = Vec::new();
    write_confusion_csv(&mut buf, &report.confusion)?;
    fs::write(&csv_path, buf).map_err(|e| Error::file(&csv_path, e))?;
    fs::write(&svg_path, confusion_svg(&report.confusion)).map_err(|e| Error::file(&svg_path, e))?;
    Ok((csv_path, svg_path))
}

/// One row per sample: video id, expression, then the backbone output.
pub fn write_embeddings<W: Write>(mut out: W, params: &ModelParams, data: &Dataset) -> Result<()> {
    let pass = forward(params, data.features.view())?;
    let emb = pass.embeddings();
    writeln!(
        out,
        "{}",
        Metadata::new("embeddings")
            .with("samples", data.len())
            .with("width", emb.ncols())
            .with("seed", params.seed)
            .line()
    )?;
    let cols: Vec<String> = (0..emb.ncols()).map(|k| format!("e{k}")).collect();
    writeln!(out, "video_id,expression,{}", cols.join(","))?;
    for (label, row) in data.labels.iter().zip(emb.rows()) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(
            out,
            "{},{},{}",
            label.video_id,
            label.expression.name(),
            cells.join(",")
        )?;
    }
    Ok(())
}

pub fn export_embeddings(params: &ModelParams, data: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_embeddings(&mut buf, params, data)?;
    fs::write(path, buf).map_err(|e| Error::file(path, e))
}
