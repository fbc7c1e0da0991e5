//! Feature matrices paired with video labels, and their on-disk layout.
//!
//! A dataset directory holds `features.bin` (or `features.csv`) and
//! `labels.csv`, with label rows in feature-row order.

use std::fs;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{ExpressionClass, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::labeling::{read_labels, write_labels, VideoAULabel};

const FEATURE_MAGIC: &[u8; 8] = b"AUFEATS\0";
pub const FEATURE_FORMAT_VERSION: u32 = 1;
pub const FEATURES_FILE: &str = "features.bin";
pub const FEATURES_CSV_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F64 = 0,
    F32 = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<VideoAULabel>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<VideoAULabel>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn expressions(&self) -> Vec<ExpressionClass> {
        self.labels.iter().map(|l| l.expression).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_EXPRESSIONS] {
        let mut counts = [0; NUM_EXPRESSIONS];
        for l in &self.labels {
            counts[l.expression.index()] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }
}

/// Per-class split: within each class a seeded shuffle picks
/// `round(count · test_fraction)` test samples (at least one when the class
/// has two or more). Both halves keep the original row order.
pub fn split_stratified(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = stratified_indices(&data.labels, test_fraction, seed)?;
    Ok((data.select(&train), data.select(&test)))
}

/// Row indices of the (train, test) halves used by [`split_stratified`].
pub fn stratified_indices(labels: &[VideoAULabel], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in ExpressionClass::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].expression == class).collect();
        idx.shuffle(&mut rng);
        let mut n_test = (idx.len() as f64 * test_fraction).round() as usize;
        if test_fraction > 0.0 && n_test == 0 && idx.len() >= 2 {
            n_test = 1;
        }
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn write_features<W: Write>(mut out: W, features: &Array2<f64>, dtype: DType) -> Result<()> {
    out.write_all(FEATURE_MAGIC)?;
    out.write_all(&FEATURE_FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(features.nrows() as u64).to_le_bytes())?;
    out.write_all(&(features.ncols() as u64).to_le_bytes())?;
    out.write_all(&[dtype as u8])?;
    let mut buf = Vec::with_capacity(features.len() * 8);
    for &v in features.iter() {
        match dtype {
            DType::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            DType::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_features<R: Read>(mut reader: R) -> Result<Array2<f64>> {
    let corrupt = |m: &str| Error::CorruptData(format!("feature file: {m}"));
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < 29 || &bytes[..8] != FEATURE_MAGIC {
        return Err(corrupt("bad header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FEATURE_FORMAT_VERSION {
        return Err(Error::Version {
            expected: FEATURE_FORMAT_VERSION,
            found: version,
        });
    }
    let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let f = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
    let width = match bytes[28] {
        0 => 8,
        1 => 4,
        other => return Err(corrupt(&format!("unknown dtype tag {other}"))),
    };
    let payload = &bytes[29..];
    if Some(payload.len()) != n.checked_mul(f).and_then(|c| c.checked_mul(width)) {
        return Err(corrupt("payload size does not match header"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(width)
        .map(|c| match width {
            8 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            _ => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
        })
        .collect();
    Array2::from_shape_vec((n, f), values).map_err(|e| corrupt(&e.to_string()))
}

/// Comma-separated fallback; a non-numeric first row is taken as a header.
pub fn read_features_csv<R: Read>(reader: R) -> Result<Array2<f64>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::NonNumeric {
                    row: i,
                    column: "feature".into(),
                    text: record.iter().collect::<Vec<_>>().join(","),
                })
            }
        }
    }
    let f = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != f) {
        return Err(Error::Shape("ragged feature rows".into()));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, f), rows.into_iter().flatten().collect()).map_err(|e| Error::Shape(e.to_string()))
}

pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let fpath = dir.join(FEATURES_FILE);
    let file = fs::File::create(&fpath).map_err(|e| Error::file(&fpath, e))?;
    write_features(std::io::BufWriter::new(file), &data.features, DType::F64)?;
    let lpath = dir.join(LABELS_FILE);
    let file = fs::File::create(&lpath).map_err(|e| Error::file(&lpath, e))?;
    write_labels(std::io::BufWriter::new(file), &data.labels)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let bin = dir.join(FEATURES_FILE);
    let features = if bin.exists() {
        let file = fs::File::open(&bin).map_err(|e| Error::file(&bin, e))?;
        read_features(BufReader::new(file))?
    } else {
        let csv = dir.join(FEATURES_CSV_FILE);
        let file = fs::File::open(&csv).map_err(|e| Error::file(&csv, e))?;
        read_features_csv(BufReader::new(file))?
    };
    let lpath = dir.join(LABELS_FILE);
    let file = fs::File::open(&lpath).map_err(|e| Error::file(&lpath, e))?;
    Dataset::new(features, read_labels(BufReader::new(file))?)
}
