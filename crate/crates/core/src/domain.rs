//! Expression classes, action units, and the AU-expression knowledge matrix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_EXPRESSIONS: usize = 7;
pub const NUM_AUS: usize = 18;
pub const NUM_INTENSITY_AUS: usize = 17;

/// The seven basic expressions, in the order used by every emitted table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExpressionClass {
    Happy,
    Sad,
    Neutral,
    Angry,
    Surprise,
    Disgust,
    Fear,
}

impl ExpressionClass {
    pub const ALL: [ExpressionClass; NUM_EXPRESSIONS] = [
        ExpressionClass::Happy,
        ExpressionClass::Sad,
        ExpressionClass::Neutral,
        ExpressionClass::Angry,
        ExpressionClass::Surprise,
        ExpressionClass::Disgust,
        ExpressionClass::Fear,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ExpressionClass::Happy => "Happy",
            ExpressionClass::Sad => "Sad",
            ExpressionClass::Neutral => "Neutral",
            ExpressionClass::Angry => "Angry",
            ExpressionClass::Surprise => "Surprise",
            ExpressionClass::Disgust => "Disgust",
            ExpressionClass::Fear => "Fear",
        }
    }

    /// Three-letter column abbreviation used in per-class accuracy tables.
    pub fn short_name(self) -> &'static str {
        &self.name()[..3]
    }

    pub fn is_major(self) -> bool {
        is_major_class(self)
    }
}

impl fmt::Display for ExpressionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExpressionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| Error::UnknownExpression(s.to_string()))
    }
}

/// Case-insensitive lookup of an expression's canonical index.
pub fn expression_index(name: &str) -> Result<usize> {
    name.parse::<ExpressionClass>().map(ExpressionClass::index)
}

pub fn expression_name(index: usize) -> Option<&'static str> {
    ExpressionClass::from_index(index).map(ExpressionClass::name)
}

/// Happy, Sad, Angry and Neutral each hold more than a seventh of the samples
/// in the mainstream datasets; the remaining three are minor classes.
pub fn is_major_class(c: ExpressionClass) -> bool {
    matches!(
        c,
        ExpressionClass::Happy | ExpressionClass::Sad | ExpressionClass::Angry | ExpressionClass::Neutral
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MajorMinorPartition {
    pub majors: Vec<ExpressionClass>,
    pub minors: Vec<ExpressionClass>,
}

impl Default for MajorMinorPartition {
    fn default() -> Self {
        let (majors, minors) = ExpressionClass::ALL.iter().partition(|c| is_major_class(**c));
        Self { majors, minors }
    }
}

/// The 18 action units OpenFace reports as presences, ascending by AU number.
/// All but AU28 also carry an intensity estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionUnit {
    Au01,
    Au02,
    Au04,
    Au05,
    Au06,
    Au07,
    Au09,
    Au10,
    Au12,
    Au14,
    Au15,
    Au17,
    Au20,
    Au23,
    Au25,
    Au26,
    Au28,
    Au45,
}

impl ActionUnit {
    pub const ALL: [ActionUnit; NUM_AUS] = [
        ActionUnit::Au01,
        ActionUnit::Au02,
        ActionUnit::Au04,
        ActionUnit::Au05,
        ActionUnit::Au06,
        ActionUnit::Au07,
        ActionUnit::Au09,
        ActionUnit::Au10,
        ActionUnit::Au12,
        ActionUnit::Au14,
        ActionUnit::Au15,
        ActionUnit::Au17,
        ActionUnit::Au20,
        ActionUnit::Au23,
        ActionUnit::Au25,
        ActionUnit::Au26,
        ActionUnit::Au28,
        ActionUnit::Au45,
    ];

    const NUMBERS: [u8; NUM_AUS] = [1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 28, 45];

    /// AUs with an intensity channel, in canonical order (all except AU28).
    pub fn intensity_aus() -> impl Iterator<Item = ActionUnit> {
        Self::ALL.into_iter().filter(|au| au.has_intensity())
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn number(self) -> u8 {
        Self::NUMBERS[self.index()]
    }

    pub fn has_intensity(self) -> bool {
        self != ActionUnit::Au28
    }

    /// Position within the 17-member intensity vector.
    pub fn intensity_index(self) -> Option<usize> {
        match self {
            ActionUnit::Au28 => None,
            ActionUnit::Au45 => Some(16),
            other => Some(other.index()),
        }
    }

    pub fn name(self) -> String {
        format!("AU{:02}", self.number())
    }
}

impl fmt::Display for ActionUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AU{:02}", self.number())
    }
}

impl FromStr for ActionUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownActionUnit(s.to_string());
        let digits = s
            .trim()
            .strip_prefix("AU")
            .or_else(|| s.trim().strip_prefix("au"))
            .ok_or_else(unknown)?;
        let number: u8 = digits.parse().map_err(|_| unknown())?;
        Self::ALL
            .iter()
            .copied()
            .find(|au| au.number() == number)
            .ok_or_else(unknown)
    }
}

pub fn au_index(name: &str) -> Result<usize> {
    name.parse::<ActionUnit>().map(ActionUnit::index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnowledgeStage {
    PerDataset,
    Aggregate,
    LossScaled,
}

impl KnowledgeStage {
    /// Exclusive upper bound of the stage's value range; the lower bound is 0.
    pub fn upper_bound(self) -> f64 {
        match self {
            KnowledgeStage::PerDataset | KnowledgeStage::Aggregate => 1.0,
            KnowledgeStage::LossScaled => 5.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeStage::PerDataset => "per-dataset",
            KnowledgeStage::Aggregate => "aggregate",
            KnowledgeStage::LossScaled => "loss-scaled",
        }
    }
}

impl fmt::Display for KnowledgeStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KnowledgeStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-dataset" => Ok(KnowledgeStage::PerDataset),
            "aggregate" => Ok(KnowledgeStage::Aggregate),
            "loss-scaled" => Ok(KnowledgeStage::LossScaled),
            other => Err(Error::InvalidArgument(format!("unknown knowledge stage {other:?}"))),
        }
    }
}

/// AU-major (18 rows × 7 expression columns) weight matrix.
///
/// Rows are not checked at construction so that malformed imports can still be
/// inspected with [`validate_knowledge`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeMatrix {
    pub values: Vec<Vec<f64>>,
    pub stage: KnowledgeStage,
    pub datasets: usize,
    pub theta: Option<f64>,
    pub support: Vec<Vec<u64>>,
}

impl KnowledgeMatrix {
    pub fn filled(value: f64, stage: KnowledgeStage) -> Self {
        Self {
            values: vec![vec![value; NUM_EXPRESSIONS]; NUM_AUS],
            stage,
            datasets: 1,
            theta: None,
            support: vec![vec![0; NUM_EXPRESSIONS]; NUM_AUS],
        }
    }

    pub fn get(&self, au: ActionUnit, expression: ExpressionClass) -> f64 {
        self.values[au.index()][expression.index()]
    }

    /// The 18 AU weights for one expression (the `k_j` of the AU loss).
    pub fn expression_weights(&self, expression: ExpressionClass) -> [f64; NUM_AUS] {
        let mut out = [0.0; NUM_AUS];
        for (slot, row) in out.iter_mut().zip(&self.values) {
            *slot = row[expression.index()];
        }
        out
    }

    pub fn is_well_shaped(&self) -> bool {
        self.values.len() == NUM_AUS
            && self.values.iter().all(|r| r.len() == NUM_EXPRESSIONS)
            && self.support.len() == NUM_AUS
            && self.support.iter().all(|r| r.len() == NUM_EXPRESSIONS)
    }

    pub fn ensure_stage(&self, expected: KnowledgeStage) -> Result<()> {
        if self.stage == expected {
            Ok(())
        } else {
            Err(Error::Stage {
                expected,
                found: self.stage,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape { rows: usize, cols: Vec<usize> },
    SupportShape,
    NotFinite { au: usize, expression: usize },
    OutOfRange { au: usize, expression: usize, value: f64 },
    NoDatasets,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { rows, cols } => {
                write!(
                    f,
                    "expected {NUM_AUS}x{NUM_EXPRESSIONS}, found {rows} rows with widths {cols:?}"
                )
            }
            Violation::SupportShape => write!(f, "support counts do not match the matrix shape"),
            Violation::NotFinite { au, expression } => write!(f, "cell ({au}, {expression}) is not finite"),
            Violation::OutOfRange { au, expression, value } => {
                write!(f, "cell ({au}, {expression}) = {value} outside the stage range")
            }
            Violation::NoDatasets => write!(f, "dataset count is zero"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every shape problem, NaN, and value outside the stage's open interval.
pub fn validate_knowledge(m: &KnowledgeMatrix) -> ValidationReport {
    let mut violations = Vec::new();
    let widths: Vec<usize> = m.values.iter().map(Vec::len).collect();
    if m.values.len() != NUM_AUS || widths.iter().any(|&w| w != NUM_EXPRESSIONS) {
        violations.push(Violation::Shape {
            rows: m.values.len(),
            cols: widths,
        });
    }
    if m.support.len() != m.values.len() || m.support.iter().zip(&m.values).any(|(s, v)| s.len() != v.len()) {
        violations.push(Violation::SupportShape);
    }
    if m.datasets == 0 {
        violations.push(Violation::NoDatasets);
    }
    let upper = m.stage.upper_bound();
    for (au, row) in m.values.iter().enumerate() {
        for (expression, &value) in row.iter().enumerate() {
            if !value.is_finite() {
                violations.push(Violation::NotFinite { au, expression });
            } else if value <= 0.0 || value >= upper {
                violations.push(Violation::OutOfRange { au, expression, value });
            }
        }
    }
    ValidationReport { violations }
}
