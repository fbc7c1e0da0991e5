//! Video-level AU pseudo-labels and positive-class weights for the AU loss.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{is_major_class, ActionUnit, ExpressionClass, NUM_AUS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::ingest::FrameAURecord;

/// Weight used when every sample in scope is positive for an AU.
pub const POS_WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoAULabel {
    pub video_id: String,
    pub y: [u8; NUM_AUS],
    pub frame_count: usize,
    pub expression: ExpressionClass,
}

/// An AU is on for the video when it is present in at least half the frames.
pub fn derive_video_au_labels(records: &[FrameAURecord], expression: ExpressionClass) -> Result<VideoAULabel> {
    let first = records
        .first()
        .ok_or_else(|| Error::Empty("video has no frames".into()))?;
    if let Some(other) = records.iter().find(|r| r.video_id != first.video_id) {
        return Err(Error::MixedVideos(first.video_id.clone(), other.video_id.clone()));
    }
    let n = records.len();
    let mut y = [0u8; NUM_AUS];
    for (j, slot) in y.iter_mut().enumerate() {
        let on: usize = records.iter().map(|r| r.presences[j] as usize).sum();
        *slot = u8::from(2 * on >= n);
    }
    Ok(VideoAULabel {
        video_id: first.video_id.clone(),
        y,
        frame_count: n,
        expression,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosWeightStrategy {
    /// All-ones weights.
    #[default]
    None,
    /// One weight vector from all samples, shared by every class.
    Global,
    /// One weight vector per expression class.
    Distinct,
    /// Per-class weights for minor classes, ones for major classes.
    Minor,
}

impl PosWeightStrategy {
    pub const ALL: [PosWeightStrategy; 4] = [
        PosWeightStrategy::None,
        PosWeightStrategy::Global,
        PosWeightStrategy::Distinct,
        PosWeightStrategy::Minor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PosWeightStrategy::None => "none",
            PosWeightStrategy::Global => "global",
            PosWeightStrategy::Distinct => "distinct",
            PosWeightStrategy::Minor => "minor",
        }
    }
}

impl fmt::Display for PosWeightStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosWeightStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown pos-weight strategy {s:?}")))
    }
}

/// Positive-class weights, one row per expression class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosWeightSpec {
    pub strategy: PosWeightStrategy,
    pub values: [[f64; NUM_AUS]; NUM_EXPRESSIONS],
    pub total: usize,
    pub class_counts: [usize; NUM_EXPRESSIONS],
    /// Which split the counts came from.
    pub split: String,
    pub warnings: Vec<String>,
}

impl PosWeightSpec {
    pub fn ones() -> Self {
        Self {
            strategy: PosWeightStrategy::None,
            values: [[1.0; NUM_AUS]; NUM_EXPRESSIONS],
            total: 0,
            class_counts: [0; NUM_EXPRESSIONS],
            split: "train".into(),
            warnings: Vec::new(),
        }
    }

    pub fn row(&self, class: ExpressionClass) -> &[f64; NUM_AUS] {
        &self.values[class.index()]
    }
}

/// `(count - positives) / positives` with the division-by-zero fallbacks:
/// no positives counts as one pseudo-positive, all positives is floored.
fn ratio(count: usize, positives: usize, scope: &str, au: ActionUnit, warnings: &mut Vec<String>) -> f64 {
    if positives == 0 {
        warnings.push(format!("{scope}: no positives for {au}; using {count}"));
        count as f64
    } else if positives == count {
        warnings.push(format!(
            "{scope}: every sample positive for {au}; flooring at {POS_WEIGHT_FLOOR}"
        ));
        POS_WEIGHT_FLOOR
    } else {
        (count - positives) as f64 / positives as f64
    }
}

fn class_counts(labels: &[VideoAULabel]) -> [usize; NUM_EXPRESSIONS] {
    let mut counts = [0; NUM_EXPRESSIONS];
    for l in labels {
        counts[l.expression.index()] += 1;
    }
    counts
}

fn emit(spec: PosWeightSpec) -> PosWeightSpec {
    for w in &spec.warnings {
        log::warn!("pos-weight ({}): {w}", spec.strategy);
    }
    spec
}

pub fn pos_weight_global(labels: &[VideoAULabel]) -> Result<PosWeightSpec> {
    if labels.is_empty() {
        return Err(Error::Empty("no video labels".into()));
    }
    let c = labels.len();
    let mut warnings = Vec::new();
    let mut row = [0.0; NUM_AUS];
    for (j, slot) in row.iter_mut().enumerate() {
        let positives = labels.iter().filter(|l| l.y[j] == 1).count();
        *slot = ratio(c, positives, "all samples", ActionUnit::ALL[j], &mut warnings);
    }
    Ok(emit(PosWeightSpec {
        strategy: PosWeightStrategy::Global,
        values: [row; NUM_EXPRESSIONS],
        total: c,
        class_counts: class_counts(labels),
        split: "train".into(),
        warnings,
    }))
}

pub fn pos_weight_distinct(labels: &[VideoAULabel]) -> Result<PosWeightSpec> {
    distinct(labels).map(emit)
}

fn distinct(labels: &[VideoAULabel]) -> Result<PosWeightSpec> {
    if labels.is_empty() {
        return Err(Error::Empty("no video labels".into()));
    }
    let counts = class_counts(labels);
    let mut warnings = Vec::new();
    let mut values = [[1.0; NUM_AUS]; NUM_EXPRESSIONS];
    for class in ExpressionClass::ALL {
        let i = class.index();
        if counts[i] == 0 {
            warnings.push(format!("{class}: no samples; using all-ones row"));
            continue;
        }
        for (j, (slot, au)) in values[i].iter_mut().zip(ActionUnit::ALL).enumerate() {
            let positives = labels.iter().filter(|l| l.expression == class && l.y[j] == 1).count();
            *slot = ratio(counts[i], positives, class.name(), au, &mut warnings);
        }
    }
    Ok(PosWeightSpec {
        strategy: PosWeightStrategy::Distinct,
        values,
        total: labels.len(),
        class_counts: counts,
        split: "train".into(),
        warnings,
    })
}

pub fn pos_weight_minor(labels: &[VideoAULabel]) -> Result<PosWeightSpec> {
    let mut spec = distinct(labels)?;
    spec.strategy = PosWeightStrategy::Minor;
    for class in ExpressionClass::ALL.into_iter().filter(|&c| is_major_class(c)) {
        spec.values[class.index()] = [1.0; NUM_AUS];
    }
    let minors: Vec<&str> = ExpressionClass::ALL
        .iter()
        .filter(|c| !c.is_major())
        .map(|c| c.name())
        .collect();
    spec.warnings.retain(|w| minors.iter().any(|m| w.starts_with(m)));
    Ok(emit(spec))
}

pub fn pos_weights(strategy: PosWeightStrategy, labels: &[VideoAULabel]) -> Result<PosWeightSpec> {
    match strategy {
        PosWeightStrategy::None => Ok(PosWeightSpec {
            total: labels.len(),
            class_counts: class_counts(labels),
            ..PosWeightSpec::ones()
        }),
        PosWeightStrategy::Global => pos_weight_global(labels),
        PosWeightStrategy::Distinct => pos_weight_distinct(labels),
        PosWeightStrategy::Minor => pos_weight_minor(labels),
    }
}

fn au_header() -> String {
    ActionUnit::ALL.iter().map(|a| a.name()).collect::<Vec<_>>().join(",")
}

/// `video_id,expression,n,AU01..AU45` rows.
pub fn write_labels<W: Write>(mut out: W, labels: &[VideoAULabel]) -> Result<()> {
    writeln!(out, "video_id,expression,n,{}", au_header())?;
    for l in labels {
        let bits: Vec<String> = l.y.iter().map(|b| b.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{}",
            l.video_id,
            l.expression,
            l.frame_count,
            bits.join(",")
        )?;
    }
    Ok(())
}

pub fn read_labels<R: Read>(reader: R) -> Result<Vec<VideoAULabel>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers()?.clone();
    let expected = format!("video_id,expression,n,{}", au_header());
    if header.iter().collect::<Vec<_>>().join(",") != expected {
        return Err(Error::CorruptData("unexpected label file header".into()));
    }
    let mut out = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row = row?;
        let row_no = i + 1;
        let frame_count: usize = row[2].parse().map_err(|_| Error::NonNumeric {
            row: row_no,
            column: "n".into(),
            text: row[2].to_string(),
        })?;
        let mut y = [0u8; NUM_AUS];
        for (j, slot) in y.iter_mut().enumerate() {
            *slot = match &row[3 + j] {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::NonNumeric {
                        row: row_no,
                        column: ActionUnit::ALL[j].name(),
                        text: other.to_string(),
                    })
                }
            };
        }
        out.push(VideoAULabel {
            video_id: row[0].to_string(),
            y,
            frame_count,
            expression: row[1].parse()?,
        });
    }
    Ok(out)
}

/// `video_id,expression` rows assigning each clip its expression class.
pub fn write_video_expressions<W: Write>(mut out: W, labels: &BTreeMap<String, ExpressionClass>) -> Result<()> {
    writeln!(out, "video_id,expression")?;
    for (video, class) in labels {
        writeln!(out, "{video},{class}")?;
    }
    Ok(())
}

pub fn read_video_expressions<R: Read>(reader: R) -> Result<BTreeMap<String, ExpressionClass>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (vid, expr) = (col("video_id")?, col("expression")?);
    let mut out = BTreeMap::new();
    for row in csv.records() {
        let row = row?;
        out.insert(row[vid].to_string(), row[expr].parse()?);
    }
    Ok(out)
}

/// 7×18 weight table preceded by a one-line metadata comment.
pub fn write_pos_weights<W: Write>(mut out: W, spec: &PosWeightSpec) -> Result<()> {
    let counts: Vec<String> = spec.class_counts.iter().map(|c| c.to_string()).collect();
    writeln!(
        out,
        "# strategy={} split={} total={} class_counts={}",
        spec.strategy,
        spec.split,
        spec.total,
        counts.join(";")
    )?;
    writeln!(out, "expression,{}", au_header())?;
    for class in ExpressionClass::ALL {
        let cells: Vec<String> = spec.values[class.index()].iter().map(|v| v.to_string()).collect();
        writeln!(out, "{class},{}", cells.join(","))?;
    }
    Ok(())
}

pub fn read_pos_weights<R: Read>(mut reader: R) -> Result<PosWeightSpec> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let corrupt = |m: &str| Error::CorruptData(format!("pos-weight file: {m}"));
    let mut lines = text.lines();
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| corrupt("missing metadata"))?;
    let mut spec = PosWeightSpec::ones();
    for kv in meta.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| corrupt("bad metadata"))?;
        match k {
            "strategy" => spec.strategy = v.parse()?,
            "split" => spec.split = v.to_string(),
            "total" => spec.total = v.parse().map_err(|_| corrupt("bad total"))?,
            "class_counts" => {
                let parts: Vec<&str> = v.split(';').collect();
                if parts.len() != NUM_EXPRESSIONS {
                    return Err(corrupt("bad class counts"));
                }
                for (slot, p) in spec.class_counts.iter_mut().zip(parts) {
                    *slot = p.parse().map_err(|_| corrupt("bad class count"))?;
                }
            }
            _ => {}
        }
    }
    if lines.next() != Some(format!("expression,{}", au_header()).as_str()) {
        return Err(corrupt("unexpected header"));
    }
    let mut rows = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != NUM_AUS + 1 {
            return Err(corrupt("row width"));
        }
        let class: ExpressionClass = cells[0].parse()?;
        for (slot, c) in spec.values[class.index()].iter_mut().zip(&cells[1..]) {
            let v: f64 = c.trim().parse().map_err(|_| corrupt("bad weight"))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(corrupt("weights must be finite and positive"));
            }
            *slot = v;
        }
        rows += 1;
    }
    if rows != NUM_EXPRESSIONS {
        return Err(Error::Shape(format!(
            "expected {NUM_EXPRESSIONS} weight rows, found {rows}"
        )));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::NUM_INTENSITY_AUS;

    fn frames(n: usize, on: usize, au: usize) -> Vec<FrameAURecord> {
        (0..n)
            .map(|i| {
                let mut presences = [0; NUM_AUS];
                presences[au] = u8::from(i < on);
                FrameAURecord {
                    video_id: "v".into(),
                    frame_index: i as u32 + 1,
                    timestamp: 0.0,
                    confidence: 1.0,
                    success: true,
                    intensities: [1.0; NUM_INTENSITY_AUS],
                    presences,
                    interpolated_mask: [false; NUM_INTENSITY_AUS],
                }
            })
            .collect()
    }

    fn label(class: ExpressionClass, on: &[usize]) -> VideoAULabel {
        let mut y = [0; NUM_AUS];
        for &j in on {
            y[j] = 1;
        }
        VideoAULabel {
            video_id: format!("{class}-{on:?}"),
            y,
            frame_count: 1,
            expression: class,
        }
    }

    #[test]
    fn majority_rule() {
        let au12 = ActionUnit::Au12.index();
        let happy = ExpressionClass::Happy;
        assert_eq!(derive_video_au_labels(&frames(10, 5, au12), happy).unwrap().y[au12], 1);
        assert_eq!(derive_video_au_labels(&frames(10, 4, au12), happy).unwrap().y[au12], 0);
        assert_eq!(derive_video_au_labels(&frames(1, 1, au12), happy).unwrap().y[au12], 1);
        assert!(derive_video_au_labels(&[], happy).is_err());
    }

    #[test]
    fn global_examples() {
        let h = ExpressionClass::Happy;
        let four = |on: usize| {
            (0..4)
                .map(|i| label(h, if i < on { &[0] } else { &[] }))
                .collect::<Vec<_>>()
        };
        assert_eq!(pos_weight_global(&four(2)).unwrap().values[0][0], 1.0);
        assert_eq!(pos_weight_global(&four(1)).unwrap().values[3][0], 3.0);
        let none = pos_weight_global(&four(0)).unwrap();
        assert_eq!(none.values[6][0], 4.0);
        assert!(!none.warnings.is_empty());
        assert!(pos_weight_global(&[]).is_err());
    }

    #[test]
    fn distinct_examples() {
        let mut labels = vec![
            label(ExpressionClass::Happy, &[8]),
            label(ExpressionClass::Happy, &[]),
            label(ExpressionClass::Happy, &[]),
            label(ExpressionClass::Sad, &[8]),
        ];
        let spec = pos_weight_distinct(&labels).unwrap();
        assert_eq!(spec.values[0][8], 2.0);
        // Every Sad video is positive for AU12.
        assert_eq!(spec.values[1][8], POS_WEIGHT_FLOOR);
        // Unpopulated class.
        assert_eq!(spec.values[5], [1.0; NUM_AUS]);

        labels.push(label(ExpressionClass::Sad, &[]));
        let reordered: Vec<_> = labels.iter().rev().cloned().collect();
        let a = pos_weight_distinct(&labels).unwrap();
        let b = pos_weight_distinct(&reordered).unwrap();
        assert_eq!(a.values[0], b.values[0]);
    }

    #[test]
    fn minor_examples() {
        let labels: Vec<_> = ExpressionClass::ALL
            .iter()
            .flat_map(|&c| [label(c, &[c.index()]), label(c, &[])])
            .collect();
        let distinct = pos_weight_distinct(&labels).unwrap();
        let minor = pos_weight_minor(&labels).unwrap();
        assert_eq!(minor.values[0], [1.0; NUM_AUS]);
        assert_eq!(minor.values[5], distinct.values[5]);
    }

    #[test]
    fn strategy_names() {
        for s in PosWeightStrategy::ALL {
            assert_eq!(s.as_str().parse::<PosWeightStrategy>().unwrap(), s);
        }
        assert!("focal".parse::<PosWeightStrategy>().is_err());
    }

    #[test]
    fn weight_file_round_trip() {
        let labels = vec![
            label(ExpressionClass::Fear, &[1]),
            label(ExpressionClass::Fear, &[]),
            label(ExpressionClass::Happy, &[2]),
        ];
        let spec = pos_weight_minor(&labels).unwrap();
        let mut buf = Vec::new();
        write_pos_weights(&mut buf, &spec).unwrap();
        let back = read_pos_weights(&buf[..]).unwrap();
        assert_eq!(back.values, spec.values);
        assert_eq!(back.strategy, PosWeightStrategy::Minor);
        assert_eq!(back.class_counts, spec.class_counts);

        let mut buf = Vec::new();
        write_labels(&mut buf, &labels).unwrap();
        assert_eq!(read_labels(&buf[..]).unwrap(), labels);
    }
}
