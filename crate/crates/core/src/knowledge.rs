//! Per-dataset AU-expression knowledge matrices and their cross-dataset
//! aggregate.
//!
//! Pipeline for one dataset: keep frames whose predicted score for the
//! asserted expression exceeds θ, take the per-class median of each AU
//! intensity, fill the AU28 row (presence only) with the mean of the other 17
//! medians, shift the whole matrix by its (max + min) / 2 and squash with a
//! sigmoid. Datasets are then summed, shifted by a midpoint, squashed again,
//! and finally multiplied by 5 for use as loss weights.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_knowledge, ActionUnit, ExpressionClass, KnowledgeMatrix, KnowledgeStage, NUM_AUS, NUM_EXPRESSIONS,
    NUM_INTENSITY_AUS,
};
use crate::error::{Error, Result};
use crate::ingest::{FrameAURecord, FramePrediction, FrameQuality};

pub const KNOWLEDGE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_THETA: f64 = 0.5;
/// Factor applied by [`scale_for_loss`], matching OpenFace's [0, 5] scale.
pub const LOSS_SCALE: f64 = 5.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub type FrameKey = (String, u32);

#[derive(Debug, Clone, PartialEq)]
pub struct ReliableFrameSet {
    pub dataset_id: String,
    pub theta: f64,
    pub members: BTreeMap<FrameKey, ExpressionClass>,
    pub retained: [usize; NUM_EXPRESSIONS],
}

impl ReliableFrameSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Keeps the frames whose score for their asserted label is strictly above `theta`.
pub fn filter_reliable_frames(
    dataset_id: &str,
    predictions: &[FramePrediction],
    theta: f64,
) -> Result<ReliableFrameSet> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("theta {theta} outside [0, 1]")));
    }
    let mut members = BTreeMap::new();
    let mut retained = [0usize; NUM_EXPRESSIONS];
    for p in predictions.iter().filter(|p| p.asserted_score() > theta) {
        let key = (p.video_id.clone(), p.frame_index);
        if members.insert(key, p.asserted_label).is_none() {
            retained[p.asserted_label.index()] += 1;
        }
    }
    if members.is_empty() {
        log::warn!("{dataset_id}: no frame exceeds theta = {theta}");
    }
    Ok(ReliableFrameSet {
        dataset_id: dataset_id.to_string(),
        theta,
        members,
        retained,
    })
}

/// Median with the even-count convention of averaging the two central order
/// statistics. `None` for an empty slice.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Per-class intensity samples. Merging concatenates, and medians are only
/// taken in [`ClassIntensities::medians`], so any reduction order gives the same
/// result.
#[derive(Debug, Clone, Default)]
pub struct ClassIntensities {
    samples: [[Vec<f64>; NUM_INTENSITY_AUS]; NUM_EXPRESSIONS],
}

impl ClassIntensities {
    pub fn push(&mut self, class: ExpressionClass, intensities: &[f64; NUM_INTENSITY_AUS]) {
        for (bucket, &v) in self.samples[class.index()].iter_mut().zip(intensities) {
            bucket.push(v);
        }
    }

    pub fn merge(&mut self, other: ClassIntensities) {
        for (mine, theirs) in self.samples.iter_mut().zip(other.samples) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.extend(b);
            }
        }
    }

    pub fn count(&self, class: ExpressionClass) -> usize {
        self.samples[class.index()][0].len()
    }

    /// Raw 18×7 matrix: intensity medians, AU28 as the mean of the other 17.
    /// Columns of classes without samples are `None`.
    pub fn medians(&self) -> Vec<Vec<Option<f64>>> {
        let mut raw = vec![vec![None; NUM_EXPRESSIONS]; NUM_AUS];
        for class in ExpressionClass::ALL {
            let c = class.index();
            let mut sum = 0.0;
            let mut have = true;
            for au in ActionUnit::intensity_aus() {
                let k = au.intensity_index().expect("intensity AU");
                let mut values = self.samples[c][k].clone();
                match median(&mut values) {
                    Some(m) => {
                        raw[au.index()][c] = Some(m);
                        sum += m;
                    }
                    None => have = false,
                }
            }
            if have {
                raw[ActionUnit::Au28.index()][c] = Some(sum / NUM_INTENSITY_AUS as f64);
            }
        }
        raw
    }
}

/// Shifts every present cell by the (max + min) / 2 of the present cells and
/// applies the sigmoid. Absent cells come out as 0.5.
pub fn center_and_squash(raw: &[Vec<Option<f64>>]) -> Vec<Vec<f64>> {
    let present = raw.iter().flatten().flatten().copied();
    let (lo, hi) = present.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let mid = if lo.is_finite() { (lo + hi) / 2.0 } else { 0.0 };
    raw.iter()
        .map(|row| row.iter().map(|cell| cell.map_or(0.5, |v| sigmoid(v - mid))).collect())
        .collect()
}

/// What to do when an expression class has no reliable frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyClassPolicy {
    /// Fail and list the empty classes.
    #[default]
    Reject,
    /// Leave the class column at the centered value (0.5) with zero support.
    /// The midpoint is taken over populated classes only.
    Neutral,
}

/// Builds one dataset's knowledge matrix from its frame store and reliable set.
/// Frames that fail `quality` are skipped even when reliable.
pub fn compute_dataset_knowledge(
    records: &[FrameAURecord],
    reliable: &ReliableFrameSet,
    quality: &FrameQuality,
    empty: EmptyClassPolicy,
) -> Result<KnowledgeMatrix> {
    if reliable.is_empty() {
        return Err(Error::Empty(format!("reliable frame set for {}", reliable.dataset_id)));
    }
    let mut acc = ClassIntensities::default();
    for r in records {
        if !quality.accepts(r) {
            continue;
        }
        if let Some(&class) = reliable.members.get(&(r.video_id.clone(), r.frame_index)) {
            acc.push(class, &r.intensities);
        }
    }

    let empty_classes: Vec<ExpressionClass> = ExpressionClass::ALL
        .into_iter()
        .filter(|&c| acc.count(c) == 0)
        .collect();
    if empty_classes.len() == NUM_EXPRESSIONS || (!empty_classes.is_empty() && empty == EmptyClassPolicy::Reject) {
        return Err(Error::EmptyClasses(empty_classes));
    }

    let values = center_and_squash(&acc.medians());
    let counts: Vec<u64> = ExpressionClass::ALL.iter().map(|&c| acc.count(c) as u64).collect();
    Ok(KnowledgeMatrix {
        values,
        stage: KnowledgeStage::PerDataset,
        datasets: 1,
        theta: Some(reliable.theta),
        support: vec![counts; NUM_AUS],
    })
}

/// Midpoint subtracted from the cross-dataset sum before the sigmoid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MidpointPolicy {
    /// Always subtract 2.5, as in the four-dataset reference setup.
    Compat,
    /// Subtract D / 2, the centre of the (0, D) range of a sum of D sigmoids.
    #[default]
    General,
}

impl MidpointPolicy {
    pub fn midpoint(self, datasets: usize) -> f64 {
        match self {
            MidpointPolicy::Compat => 2.5,
            MidpointPolicy::General => datasets as f64 / 2.0,
        }
    }
}

impl std::str::FromStr for MidpointPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compat" => Ok(MidpointPolicy::Compat),
            "general" | "generalized" => Ok(MidpointPolicy::General),
            other => Err(Error::InvalidArgument(format!("unknown midpoint policy {other:?}"))),
        }
    }
}

pub fn aggregate_knowledge(inputs: &[KnowledgeMatrix], policy: MidpointPolicy) -> Result<KnowledgeMatrix> {
    if inputs.is_empty() {
        return Err(Error::Empty("no knowledge matrices to aggregate".into()));
    }
    for m in inputs {
        m.ensure_stage(KnowledgeStage::PerDataset)?;
        if !m.is_well_shaped() {
            return Err(Error::Shape(format!(
                "knowledge matrix must be {NUM_AUS}x{NUM_EXPRESSIONS}"
            )));
        }
    }
    let d = inputs.len();
    let shift = policy.midpoint(d);
    let mut values = vec![vec![0.0; NUM_EXPRESSIONS]; NUM_AUS];
    let mut support = vec![vec![0u64; NUM_EXPRESSIONS]; NUM_AUS];
    for (i, (row, srow)) in values.iter_mut().zip(support.iter_mut()).enumerate() {
        for (j, (cell, scell)) in row.iter_mut().zip(srow.iter_mut()).enumerate() {
            let sum: f64 = inputs.iter().map(|m| m.values[i][j]).sum();
            *cell = sigmoid(sum - shift);
            *scell = inputs.iter().map(|m| m.support[i][j]).sum();
        }
    }
    let theta = inputs[0].theta.filter(|t| inputs.iter().all(|m| m.theta == Some(*t)));
    Ok(KnowledgeMatrix {
        values,
        stage: KnowledgeStage::Aggregate,
        datasets: d,
        theta,
        support,
    })
}

pub fn scale_for_loss(m: &KnowledgeMatrix) -> Result<KnowledgeMatrix> {
    m.ensure_stage(KnowledgeStage::Aggregate)?;
    let mut out = m.clone();
    out.values.iter_mut().flatten().for_each(|v| *v *= LOSS_SCALE);
    out.stage = KnowledgeStage::LossScaled;
    Ok(out)
}

fn matrix_header() -> String {
    let names: Vec<&str> = ExpressionClass::ALL.iter().map(|c| c.name()).collect();
    format!("au,{}", names.join(","))
}

/// Serializes to the knowledge CSV and its support sidecar, AU-major, with a
/// metadata preamble and an end marker that detects truncation.
pub fn knowledge_to_csv(m: &KnowledgeMatrix) -> (String, String) {
    let theta = m.theta.map_or("none".to_string(), |t| t.to_string());
    let mut main = format!(
        "# au-knowledge version={KNOWLEDGE_FORMAT_VERSION}\n# stage={}\n# datasets={}\n# theta={theta}\n# tool=audfer {}\n{}\n",
        m.stage,
        m.datasets,
        env!("CARGO_PKG_VERSION"),
        matrix_header()
    );
    let mut side = format!(
        "# au-knowledge-support version={KNOWLEDGE_FORMAT_VERSION}\n{}\n",
        matrix_header()
    );
    for (i, (row, srow)) in m.values.iter().zip(&m.support).enumerate() {
        let label = ActionUnit::from_index(i).map_or(format!("row{i}"), |a| a.name());
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        main.push_str(&format!("{label},{}\n", cells.join(",")));
        let cells: Vec<String> = srow.iter().map(|v| v.to_string()).collect();
        side.push_str(&format!("{label},{}\n", cells.join(",")));
    }
    main.push_str(&format!("# end rows={}\n", m.values.len()));
    side.push_str(&format!("# end rows={}\n", m.support.len()));
    (main, side)
}

struct ParsedTable {
    meta: BTreeMap<String, String>,
    rows: Vec<Vec<String>>,
}

fn parse_table(text: &str, magic: &str) -> Result<ParsedTable> {
    let corrupt = |msg: &str| Error::CorruptKnowledge(msg.to_string());
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| corrupt("empty file"))?;
    let version = first
        .strip_prefix(&format!("# {magic} version="))
        .ok_or_else(|| corrupt("missing format line"))?;
    let version: u32 = version.trim().parse().map_err(|_| corrupt("bad version"))?;
    if version != KNOWLEDGE_FORMAT_VERSION {
        return Err(Error::Version {
            expected: KNOWLEDGE_FORMAT_VERSION,
            found: version,
        });
    }
    let mut meta = BTreeMap::new();
    let mut rows = Vec::new();
    let mut header_seen = false;
    let mut ended = false;
    for line in lines {
        if ended {
            return Err(corrupt("content after end marker"));
        }
        if let Some(comment) = line.strip_prefix("# ") {
            if let Some(count) = comment.strip_prefix("end rows=") {
                let count: usize = count.trim().parse().map_err(|_| corrupt("bad end marker"))?;
                if count != rows.len() {
                    return Err(corrupt("row count disagrees with end marker"));
                }
                ended = true;
            } else if let Some((k, v)) = comment.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if !header_seen {
            if line.trim() != matrix_header() {
                return Err(corrupt("unexpected column header"));
            }
            header_seen = true;
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if cells.len() != NUM_EXPRESSIONS + 1 {
            return Err(corrupt(&format!("row {} has {} cells", rows.len() + 1, cells.len())));
        }
        rows.push(cells);
    }
    if !ended {
        return Err(corrupt("missing end marker (truncated?)"));
    }
    if rows.len() != NUM_AUS {
        return Err(Error::Shape(format!(
            "expected {NUM_AUS} AU rows, found {}",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        let expected = ActionUnit::ALL[i].name();
        if row[0] != expected {
            return Err(corrupt(&format!("row {} is {}, expected {expected}", i + 1, row[0])));
        }
    }
    Ok(ParsedTable { meta, rows })
}

pub fn knowledge_from_csv(main: &str, support: &str) -> Result<KnowledgeMatrix> {
    let corrupt = |msg: String| Error::CorruptKnowledge(msg);
    let table = parse_table(main, "au-knowledge")?;
    let side = parse_table(support, "au-knowledge-support")?;
    let field = |key: &str| table.meta.get(key).ok_or_else(|| corrupt(format!("missing {key}")));
    let stage: KnowledgeStage = field("stage")?.parse()?;
    let datasets: usize = field("datasets")?
        .parse()
        .map_err(|_| corrupt("bad dataset count".into()))?;
    let theta = match field("theta")?.as_str() {
        "none" => None,
        t => Some(t.parse::<f64>().map_err(|_| corrupt("bad theta".into()))?),
    };
    let values = table
        .rows
        .iter()
        .map(|r| {
            r[1..]
                .iter()
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| corrupt(format!("bad cell: {e}")))?;
    let support = side
        .rows
        .iter()
        .map(|r| {
            r[1..]
                .iter()
                .map(|c| c.parse::<u64>())
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| corrupt(format!("bad support count: {e}")))?;
    Ok(KnowledgeMatrix {
        values,
        stage,
        datasets,
        theta,
        support,
    })
}

/// `K.csv` → `K.support.csv`.
pub fn support_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("knowledge");
    path.with_file_name(format!("{stem}.support.csv"))
}

pub fn export_knowledge(m: &KnowledgeMatrix, path: &Path) -> Result<()> {
    let (main, side) = knowledge_to_csv(m);
    fs::write(path, main).map_err(|e| Error::file(path, e))?;
    let sp = support_path(path);
    fs::write(&sp, side).map_err(|e| Error::file(&sp, e))?;
    Ok(())
}

pub fn import_knowledge(path: &Path) -> Result<KnowledgeMatrix> {
    let main = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let sp = support_path(path);
    let side = fs::read_to_string(&sp).map_err(|e| Error::file(&sp, e))?;
    let m = knowledge_from_csv(&main, &side)?;
    let report = validate_knowledge(&m);
    if !report.is_valid() {
        log::warn!(
            "{}: {} validation issue(s), first: {}",
            path.display(),
            report.violations.len(),
            report.violations[0]
        );
    }
    Ok(m)
}
