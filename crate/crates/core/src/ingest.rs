//! OpenFace 2.2.0 per-frame AU tracks, zero-intensity repair, and external
//! per-frame expression predictions.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{ActionUnit, ExpressionClass, NUM_AUS, NUM_EXPRESSIONS, NUM_INTENSITY_AUS};
use crate::error::{Error, Result};

pub const FRAME_STORE_FORMAT: &str = "au-frame-store";
pub const FRAME_STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAURecord {
    pub video_id: String,
    pub frame_index: u32,
    pub timestamp: f64,
    pub confidence: f64,
    pub success: bool,
    /// Intensities in [0, 5] for the 17 AUs that have them.
    pub intensities: [f64; NUM_INTENSITY_AUS],
    pub presences: [u8; NUM_AUS],
    pub interpolated_mask: [bool; NUM_INTENSITY_AUS],
}

impl FrameAURecord {
    pub fn intensity(&self, au: ActionUnit) -> Option<f64> {
        au.intensity_index().map(|i| self.intensities[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub video_id: String,
    pub frame_index: u32,
    pub scores: [f64; NUM_EXPRESSIONS],
    pub asserted_label: ExpressionClass,
}

impl FramePrediction {
    pub fn asserted_score(&self) -> f64 {
        self.scores[self.asserted_label.index()]
    }
}

/// Which frames count as usable detections during knowledge extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameQuality {
    pub min_confidence: f64,
    pub require_success: bool,
}

impl Default for FrameQuality {
    fn default() -> Self {
        Self {
            min_confidence: 0.8,
            require_success: true,
        }
    }
}

impl FrameQuality {
    pub fn accepts(&self, record: &FrameAURecord) -> bool {
        (record.success || !self.require_success) && record.confidence >= self.min_confidence
    }
}

fn intensity_column(au: ActionUnit) -> String {
    format!("{au}_r")
}

fn presence_column(au: ActionUnit) -> String {
    format!("{au}_c")
}

struct Columns {
    frame: usize,
    face_id: Option<usize>,
    timestamp: Option<usize>,
    confidence: usize,
    success: usize,
    intensities: [usize; NUM_INTENSITY_AUS],
    presences: [usize; NUM_AUS],
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let names: BTreeMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let required = |name: &str| {
            names
                .get(name)
                .copied()
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };

        let mut intensities = [0; NUM_INTENSITY_AUS];
        for (slot, au) in intensities.iter_mut().zip(ActionUnit::intensity_aus()) {
            *slot = required(&intensity_column(au))?;
        }
        let mut presences = [0; NUM_AUS];
        for (slot, au) in presences.iter_mut().zip(ActionUnit::ALL) {
            *slot = required(&presence_column(au))?;
        }
        Ok(Self {
            frame: required("frame")?,
            face_id: names.get("face_id").copied(),
            timestamp: names.get("timestamp").copied(),
            confidence: required("confidence")?,
            success: required("success")?,
            intensities,
            presences,
        })
    }
}

fn numeric(record: &csv::StringRecord, row: usize, idx: usize, header: &csv::StringRecord) -> Result<f64> {
    let text = record.get(idx).unwrap_or("").trim();
    text.parse::<f64>().map_err(|_| Error::NonNumeric {
        row,
        column: header.get(idx).unwrap_or("?").trim().to_string(),
        text: text.to_string(),
    })
}

fn binary(value: f64, row: usize, column: &str) -> Result<u8> {
    if value == 0.0 {
        Ok(0)
    } else if value == 1.0 {
        Ok(1)
    } else {
        Err(Error::OutOfRange {
            row,
            column: column.to_string(),
            value,
        })
    }
}

/// Parses one OpenFace output file. Columns are located by header name, so
/// column order does not matter. Rows reported for a second face
/// (`face_id > 0`) are dropped with a warning. Row numbers in errors count
/// data rows from 1.
pub fn parse_openface_csv<R: Read>(reader: R, video_id: &str) -> Result<Vec<FrameAURecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let header = csv.headers()?.clone();
    let cols = Columns::from_header(&header)?;

    let mut records = Vec::new();
    let mut dropped_faces = 0usize;
    for (i, row) in csv.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let value = |idx: usize| numeric(&row, row_no, idx, &header);

        if let Some(face) = cols.face_id {
            if value(face)? > 0.0 {
                dropped_faces += 1;
                continue;
            }
        }

        let frame = value(cols.frame)?;
        if frame < 1.0 || frame.fract() != 0.0 || frame > u32::MAX as f64 {
            return Err(Error::OutOfRange {
                row: row_no,
                column: "frame".into(),
                value: frame,
            });
        }
        let timestamp = match cols.timestamp {
            Some(idx) => value(idx)?,
            None => 0.0,
        };
        if !(timestamp >= 0.0) {
            return Err(Error::OutOfRange {
                row: row_no,
                column: "timestamp".into(),
                value: timestamp,
            });
        }
        let confidence = value(cols.confidence)?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::OutOfRange {
                row: row_no,
                column: "confidence".into(),
                value: confidence,
            });
        }
        let success = binary(value(cols.success)?, row_no, "success")? == 1;

        let mut intensities = [0.0; NUM_INTENSITY_AUS];
        for ((slot, &idx), au) in intensities
            .iter_mut()
            .zip(&cols.intensities)
            .zip(ActionUnit::intensity_aus())
        {
            let v = value(idx)?;
            if !(0.0..=5.0).contains(&v) {
                return Err(Error::OutOfRange {
                    row: row_no,
                    column: intensity_column(au),
                    value: v,
                });
            }
            *slot = v;
        }
        let mut presences = [0u8; NUM_AUS];
        for ((slot, &idx), au) in presences.iter_mut().zip(&cols.presences).zip(ActionUnit::ALL) {
            *slot = binary(value(idx)?, row_no, &presence_column(au))?;
        }

        records.push(FrameAURecord {
            video_id: video_id.to_string(),
            frame_index: frame as u32,
            timestamp,
            confidence,
            success,
            intensities,
            presences,
            interpolated_mask: [false; NUM_INTENSITY_AUS],
        });
    }
    if dropped_faces > 0 {
        log::warn!("{video_id}: dropped {dropped_faces} rows belonging to additional faces");
    }
    Ok(records)
}

/// Writes records in the OpenFace column layout (the subset this crate reads).
pub fn write_openface_csv<W: Write>(mut out: W, records: &[FrameAURecord]) -> Result<()> {
    let mut header = vec![
        "frame".to_string(),
        "face_id".into(),
        "timestamp".into(),
        "confidence".into(),
        "success".into(),
    ];
    header.extend(ActionUnit::intensity_aus().map(intensity_column));
    header.extend(ActionUnit::ALL.into_iter().map(presence_column));
    writeln!(out, "{}", header.join(", "))?;
    for r in records {
        let mut line = format!(
            "{}, 0, {}, {}, {}",
            r.frame_index,
            r.timestamp,
            r.confidence,
            u8::from(r.success)
        );
        for v in r.intensities {
            line.push_str(&format!(", {v}"));
        }
        for p in r.presences {
            line.push_str(&format!(", {p}.00"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads every `*.csv` file in a directory as one video, keyed by file stem.
/// Records are sorted by frame index.
pub fn load_openface_dir(dir: &Path) -> Result<BTreeMap<String, Vec<FrameAURecord>>> {
    let mut videos = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();
    for path in paths {
        let video_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("bad file name {}", path.display())))?
            .to_string();
        let file = fs::File::open(&path).map_err(|e| Error::file(&path, e))?;
        let mut records = parse_openface_csv(BufReader::new(file), &video_id)?;
        records.sort_by_key(|r| r.frame_index);
        videos.insert(video_id, records);
    }
    Ok(videos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated {
    pub records: Vec<FrameAURecord>,
    /// AUs whose series were entirely zero and could not be repaired.
    pub all_zero: Vec<ActionUnit>,
}

/// Replaces exactly-zero intensities by linear interpolation (in frame index)
/// between the nearest nonzero neighbours, per AU. Leading and trailing zeros
/// copy the nearest nonzero value. Presences are left alone.
pub fn interpolate_zero_intensities(mut records: Vec<FrameAURecord>) -> Result<Interpolated> {
    if let Some(first) = records.first() {
        let video = &first.video_id;
        for pair in records.windows(2) {
            if pair[1].video_id != *video {
                return Err(Error::MixedVideos(video.clone(), pair[1].video_id.clone()));
            }
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(Error::UnsortedFrames(pair[1].frame_index));
            }
        }
    }

    let mut all_zero = Vec::new();
    for au in ActionUnit::intensity_aus() {
        let k = au.intensity_index().expect("intensity AU");
        let anchors: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].intensities[k] != 0.0)
            .collect();
        if anchors.is_empty() {
            if !records.is_empty() {
                all_zero.push(au);
            }
            continue;
        }
        let mut next = 0usize;
        for i in 0..records.len() {
            if records[i].intensities[k] != 0.0 {
                continue;
            }
            while next < anchors.len() && anchors[next] < i {
                next += 1;
            }
            let value = match (next.checked_sub(1).map(|p| anchors[p]), anchors.get(next).copied()) {
                (Some(lo), Some(hi)) => {
                    let x0 = records[lo].frame_index as f64;
                    let x1 = records[hi].frame_index as f64;
                    let t = (records[i].frame_index as f64 - x0) / (x1 - x0);
                    let (y0, y1) = (records[lo].intensities[k], records[hi].intensities[k]);
                    y0 + t * (y1 - y0)
                }
                (Some(lo), None) => records[lo].intensities[k],
                (None, Some(hi)) => records[hi].intensities[k],
                (None, None) => unreachable!("anchors is nonempty"),
            };
            records[i].intensities[k] = value;
            records[i].interpolated_mask[k] = true;
        }
    }
    if let (Some(first), false) = (records.first(), all_zero.is_empty()) {
        let names: Vec<String> = all_zero.iter().map(|a| a.name()).collect();
        log::warn!("{}: all-zero intensity series for {}", first.video_id, names.join(", "));
    }
    Ok(Interpolated { records, all_zero })
}

/// Reads per-frame expression predictions (`video_id, frame, label, s0..s6`).
/// Score rows summing to within 1e-3 of one are renormalized; anything else is
/// rejected.
pub fn load_frame_predictions<R: Read>(reader: R) -> Result<Vec<FramePrediction>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let video_col = find("video_id")?;
    let frame_col = find("frame")?;
    let label_col = find("label")?;
    let mut score_cols = [0usize; NUM_EXPRESSIONS];
    for (i, slot) in score_cols.iter_mut().enumerate() {
        *slot = find(&format!("s{i}"))?;
    }

    let mut out = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let frame = numeric(&row, row_no, frame_col, &header)?;
        if frame < 0.0 || frame.fract() != 0.0 {
            return Err(Error::OutOfRange {
                row: row_no,
                column: "frame".into(),
                value: frame,
            });
        }
        let asserted_label: ExpressionClass = row.get(label_col).unwrap_or("").parse()?;
        let mut scores = [0.0; NUM_EXPRESSIONS];
        for (j, (slot, &idx)) in scores.iter_mut().zip(&score_cols).enumerate() {
            let v = numeric(&row, row_no, idx, &header)?;
            if v < 0.0 {
                return Err(Error::NegativeScore {
                    row: row_no,
                    column: format!("s{j}"),
                });
            }
            *slot = v;
        }
        let sum: f64 = scores.iter().sum();
        if !((1.0 - 1e-3)..=(1.0 + 1e-3)).contains(&sum) {
            return Err(Error::ScoreSum { row: row_no, sum });
        }
        scores.iter_mut().for_each(|s| *s /= sum);
        out.push(FramePrediction {
            video_id: row.get(video_col).unwrap_or("").to_string(),
            frame_index: frame as u32,
            scores,
            asserted_label,
        });
    }
    Ok(out)
}

pub fn write_frame_predictions<W: Write>(mut out: W, predictions: &[FramePrediction]) -> Result<()> {
    writeln!(out, "video_id,frame,label,s0,s1,s2,s3,s4,s5,s6")?;
    for p in predictions {
        let scores: Vec<String> = p.scores.iter().map(|s| s.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{}",
            p.video_id,
            p.frame_index,
            p.asserted_label,
            scores.join(",")
        )?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct FrameStoreHeader {
    format: String,
    version: u32,
}

/// Newline-delimited JSON: a versioned header line, then one record per frame.
pub fn write_frame_store<W: Write>(mut out: W, records: &[FrameAURecord]) -> Result<()> {
    let header = FrameStoreHeader {
        format: FRAME_STORE_FORMAT.into(),
        version: FRAME_STORE_VERSION,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_frame_store<R: Read>(reader: R) -> Result<Vec<FrameAURecord>> {
    let mut lines = BufReader::new(reader).lines();
    let header: FrameStoreHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::CorruptData("empty frame store".into())),
    };
    if header.format != FRAME_STORE_FORMAT {
        return Err(Error::CorruptData(format!("not a frame store: {}", header.format)));
    }
    if header.version != FRAME_STORE_VERSION {
        return Err(Error::Version {
            expected: FRAME_STORE_VERSION,
            found: header.version,
        });
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}
